#pragma once

#include <vector>

#include "dacsm/autodiff.hpp"
#include "dacsm/rng.hpp"

namespace dacsm {

// Q/K/V projection weights for multi-head scaled dot-product attention.
// All three are [D x D]; heads must divide D. No output projection.
struct AttentionParams {
  Tensor w_q, w_k, w_v;
  int heads = 1;

  int dim() const { return w_q.rank() == 2 ? w_q.rows() : 0; }
  int head_dim() const { return dim() / heads; }
  void validate() const;
};

// Zero-mean Gaussian perturbation of the projected K and V matrices inside
// cross-attention. Q is never perturbed. sigma = 0 injects exact zeros, so an
// enabled-but-silent spec is bit-identical to a disabled one.
struct NoiseSpec {
  double sigma = 0.05;
  bool enabled = false;
};

struct BoundAttention {
  NodeId w_q = -1, w_k = -1, w_v = -1;
  int heads = 1;
};

BoundAttention bind_attention(Tape& tape, const AttentionParams& p);

struct AttendResult {
  NodeId out;      // [Tq x D]
  Tensor weights;  // [H x Tq x Tkv] attention weights, detached
};

// Softmax(Q K^T / sqrt(head_dim)) V per head, heads concatenated. z_q and
// z_kv are [T x D] token nodes. When noise.enabled, rng must be non-null and
// supplies the K perturbation first, then the V perturbation (row-major).
AttendResult attend(Tape& tape, const BoundAttention& p, NodeId z_q, NodeId z_kv,
                    const NoiseSpec& noise = {}, Rng* rng = nullptr);

// Feed-forward sub-block: x W1 + b1 -> GELU -> W2 + b2.
struct MlpParams {
  Tensor w1, b1, w2, b2;
  void validate(int dim) const;
};

struct LayerNormParams {
  Tensor gamma, beta;
  void validate(int dim) const;
};

struct BoundMlp {
  NodeId w1 = -1, b1 = -1, w2 = -1, b2 = -1;
};

struct BoundLayerNorm {
  NodeId gamma = -1, beta = -1;
};

BoundMlp bind_mlp(Tape& tape, const MlpParams& p);
BoundLayerNorm bind_layer_norm(Tape& tape, const LayerNormParams& p);

NodeId mlp_forward(Tape& tape, const BoundMlp& mlp, NodeId x);
NodeId layer_norm(Tape& tape, const BoundLayerNorm& ln, NodeId x);

// Pre-norm residual tail: z = z_q + attn_out, then z + MLP(LN(z)).
NodeId residual_block(Tape& tape, NodeId z_q, NodeId attn_out, const BoundLayerNorm& norm_mlp,
                      const BoundMlp& mlp);

// Diagnostics on raw tensors (no tape, no gradients).

// Replaces each content row by the style row of highest cosine similarity
// (exhaustive hard swap; ties pick the lowest style index).
Tensor style_swap_hard(const Tensor& content, const Tensor& style, std::vector<int>* chosen = nullptr);

// Softmax((content_hat style_hat^T) / tau) style, where the hats are
// L2-normalized rows. The reconstruction uses the raw style rows; only the
// match scores are normalized.
Tensor soft_style_attention(const Tensor& content, const Tensor& style, double tau);

// Mean per-row, per-head KL between the attention maps produced by queries
// from z versus queries from z_alt, with keys from z in both cases.
double attention_divergence(const AttentionParams& p, const Tensor& z, const Tensor& z_alt);

}  // namespace dacsm
