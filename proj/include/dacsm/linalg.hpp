#pragma once

#include <vector>

#include "dacsm/tensor.hpp"

namespace dacsm {

struct ChannelStats {
  std::vector<double> mean;
  std::vector<double> std;  // population convention (1/N)
};

// Per-channel mean and population std over the rows of a non-empty [N x D].
ChannelStats channel_stats(const Tensor& x);

// KL(p || q) over discrete distributions with 0 * log 0 = 0. Requires equal
// lengths, nonnegative entries, sums within 1e-6 of 1, and q > 0 wherever
// p > 0 (otherwise the divergence is undefined and a NumericError is thrown).
double kl_divergence(const std::vector<double>& p, const std::vector<double>& q);

// Eigenvalues of a symmetric matrix, ascending, via cyclic Jacobi rotations.
// Input is copied; desk-scale sizes only.
std::vector<double> symmetric_eigenvalues(Tensor a);

// Smallest singular value of a rank-2 tensor, computed from the eigenvalues
// of the smaller Gram matrix. For [n x d] this is the conventional smallest
// of the min(n, d) singular values.
double min_singular_value(const Tensor& m);

}  // namespace dacsm
