#pragma once

#include <utility>
#include <vector>

#include "dacsm/tensor.hpp"

// Serial reference implementations. Deliberately naive (textbook loop order,
// two-pass statistics, explicit summation) so they are easy to audit; the
// test suites use them as oracles for the OpenMP kernels and the benchmark
// compares against them. Nothing here is used on the training path.
namespace dacsm::ref {

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor softmax_rows(const Tensor& x, double tau = 1.0);
Tensor layer_norm_rows(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps);
Tensor bilinear_resize(const Tensor& img, int out_h, int out_w);

// Per-channel mean and population std over the rows of [N x D].
std::pair<std::vector<double>, std::vector<double>> channel_stats(const Tensor& x);

// KL(p || q) with the 0 * log 0 = 0 convention, term by term.
double kl_divergence(const std::vector<double>& p, const std::vector<double>& q);

// Multi-head scaled dot-product attention by explicit summation.
// z_q: [Tq x D], z_kv: [Tkv x D], weights w_q/w_k/w_v: [D x D], heads H.
// Returns the [Tq x D] output; if weights_out is non-null it receives the
// [H x Tq x Tkv] attention weights.
Tensor attention(const Tensor& z_q, const Tensor& z_kv, const Tensor& w_q, const Tensor& w_k,
                 const Tensor& w_v, int heads, Tensor* weights_out = nullptr);

// Hard style swap: each content row is replaced by the style row with the
// highest cosine similarity, found by exhaustive search. Ties pick the lowest
// style index. Returns (swapped rows [Nc x D], chosen indices).
std::pair<Tensor, std::vector<int>> style_swap(const Tensor& content, const Tensor& style);

}  // namespace dacsm::ref
