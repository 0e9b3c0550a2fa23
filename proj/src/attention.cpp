#include "dacsm/attention.hpp"

#include <cmath>

#include "dacsm/linalg.hpp"

namespace dacsm {

void AttentionParams::validate() const {
  if (w_q.rank() != 2 || w_q.rows() != w_q.cols())
    throw ParameterError("AttentionParams: w_q must be square, got " + w_q.shape_str());
  if (!w_k.same_shape(w_q) || !w_v.same_shape(w_q))
    throw ParameterError("AttentionParams: w_k " + w_k.shape_str() + " / w_v " + w_v.shape_str() +
                         " must match w_q " + w_q.shape_str());
  if (heads < 1 || w_q.rows() % heads != 0)
    throw ParameterError("AttentionParams: heads=" + std::to_string(heads) + " must divide dim=" +
                         std::to_string(w_q.rows()));
}

BoundAttention bind_attention(Tape& tape, const AttentionParams& p) {
  p.validate();
  return BoundAttention{tape.leaf(p.w_q), tape.leaf(p.w_k), tape.leaf(p.w_v), p.heads};
}

namespace {

Tensor gaussian_like(const Tensor& t, double sigma, Rng& rng) {
  Tensor out(t.shape());
  // sigma = 0 still consumes no draws and yields exact zeros.
  if (sigma != 0.0)
    for (int i = 0; i < out.size(); ++i) out[i] = sigma * rng.normal();
  return out;
}

}  // namespace

AttendResult attend(Tape& tape, const BoundAttention& p, NodeId z_q, NodeId z_kv,
                    const NoiseSpec& noise, Rng* rng) {
  const Tensor& vq = tape.value(z_q);
  const Tensor& vkv = tape.value(z_kv);
  if (vq.rank() != 2 || vkv.rank() != 2)
    throw DimensionError("attend: token inputs must be rank 2, got " + vq.shape_str() + " and " + vkv.shape_str());
  const int d = tape.value(p.w_q).rows();
  if (vq.cols() != d || vkv.cols() != d)
    throw DimensionError("attend: token width " + std::to_string(vq.cols()) + "/" + std::to_string(vkv.cols()) +
                         " does not match projection dim " + std::to_string(d));
  if (p.heads < 1 || d % p.heads != 0)
    throw ParameterError("attend: heads=" + std::to_string(p.heads) + " must divide dim=" + std::to_string(d));
  if (noise.enabled && noise.sigma < 0.0)
    throw ParameterError("attend: noise sigma must be nonnegative, got " + std::to_string(noise.sigma));
  if (noise.enabled && rng == nullptr)
    throw ParameterError("attend: noise enabled but no rng supplied");

  NodeId q = tape.matmul(z_q, p.w_q);
  NodeId k = tape.matmul(z_kv, p.w_k);
  NodeId v = tape.matmul(z_kv, p.w_v);
  if (noise.enabled) {
    // K first, then V; the noise is data, not a parameter: no gradient.
    k = tape.add_const(k, gaussian_like(tape.value(k), noise.sigma, *rng));
    v = tape.add_const(v, gaussian_like(tape.value(v), noise.sigma, *rng));
  }

  const int dh = d / p.heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  const int tq = vq.rows(), tk = vkv.rows();
  Tensor weights({p.heads, tq, tk});
  std::vector<NodeId> head_outs;
  head_outs.reserve(static_cast<size_t>(p.heads));
  for (int h = 0; h < p.heads; ++h) {
    NodeId qh = tape.slice_cols(q, h * dh, dh);
    NodeId kh = tape.slice_cols(k, h * dh, dh);
    NodeId vh = tape.slice_cols(v, h * dh, dh);
    NodeId logits = tape.scale(tape.matmul_nt(qh, kh), inv_sqrt);
    NodeId a = tape.softmax_rows(logits, 1.0);
    const Tensor& av = tape.value(a);
    for (int i = 0; i < tq; ++i)
      for (int j = 0; j < tk; ++j) weights.at(h, i, j) = av[i * tk + j];
    head_outs.push_back(tape.matmul(a, vh));
  }
  NodeId out = p.heads == 1 ? head_outs[0] : tape.concat_cols(head_outs);
  return AttendResult{out, std::move(weights)};
}

void MlpParams::validate(int dim) const {
  if (w1.rank() != 2 || w1.rows() != dim)
    throw ParameterError("MlpParams: w1 must be [" + std::to_string(dim) + " x hidden], got " + w1.shape_str());
  const int hidden = w1.cols();
  if (b1.rank() != 1 || b1.dim(0) != hidden)
    throw ParameterError("MlpParams: b1 " + b1.shape_str() + " does not match hidden=" + std::to_string(hidden));
  if (w2.rank() != 2 || w2.rows() != hidden || w2.cols() != dim)
    throw ParameterError("MlpParams: w2 must be [" + std::to_string(hidden) + " x " + std::to_string(dim) +
                         "], got " + w2.shape_str());
  if (b2.rank() != 1 || b2.dim(0) != dim)
    throw ParameterError("MlpParams: b2 " + b2.shape_str() + " does not match dim=" + std::to_string(dim));
}

void LayerNormParams::validate(int dim) const {
  if (gamma.rank() != 1 || gamma.dim(0) != dim || beta.rank() != 1 || beta.dim(0) != dim)
    throw ParameterError("LayerNormParams: gamma " + gamma.shape_str() + " / beta " + beta.shape_str() +
                         " must be [" + std::to_string(dim) + "]");
}

BoundMlp bind_mlp(Tape& tape, const MlpParams& p) {
  return BoundMlp{tape.leaf(p.w1), tape.leaf(p.b1), tape.leaf(p.w2), tape.leaf(p.b2)};
}

BoundLayerNorm bind_layer_norm(Tape& tape, const LayerNormParams& p) {
  return BoundLayerNorm{tape.leaf(p.gamma), tape.leaf(p.beta)};
}

NodeId mlp_forward(Tape& tape, const BoundMlp& mlp, NodeId x) {
  NodeId h = tape.gelu(tape.add_bias_rows(tape.matmul(x, mlp.w1), mlp.b1));
  return tape.add_bias_rows(tape.matmul(h, mlp.w2), mlp.b2);
}

NodeId layer_norm(Tape& tape, const BoundLayerNorm& ln, NodeId x) {
  return tape.layer_norm(x, ln.gamma, ln.beta, 1e-6);
}

NodeId residual_block(Tape& tape, NodeId z_q, NodeId attn_out, const BoundLayerNorm& norm_mlp,
                      const BoundMlp& mlp) {
  NodeId z = tape.add(z_q, attn_out);
  return tape.add(z, mlp_forward(tape, mlp, layer_norm(tape, norm_mlp, z)));
}

namespace {

// Both style-matching ops require unit rows, so the inner products below are
// already the cosine scores.
void check_rows_normalized(const Tensor& x, const char* who, const char* which) {
  const int n = x.rows(), d = x.cols();
  for (int i = 0; i < n; ++i) {
    double nn = 0.0;
    for (int j = 0; j < d; ++j) nn += x[i * d + j] * x[i * d + j];
    nn = std::sqrt(nn);
    if (std::fabs(nn - 1.0) > 1e-9)
      throw ParameterError(std::string(who) + ": " + which + " row " + std::to_string(i) + " has norm " +
                           std::to_string(nn) + ", expected 1 within 1e-9");
  }
}

}  // namespace

Tensor style_swap_hard(const Tensor& content, const Tensor& style, std::vector<int>* chosen) {
  if (content.rank() != 2 || style.rank() != 2 || content.cols() != style.cols())
    throw DimensionError("style_swap_hard: incompatible " + content.shape_str() + " vs " + style.shape_str());
  if (style.rows() < 1) throw DimensionError("style_swap_hard: style set is empty");
  check_rows_normalized(content, "style_swap_hard", "content");
  check_rows_normalized(style, "style_swap_hard", "style");
  const Tensor cos = matmul_nt(content, style);
  const int nc = content.rows(), ns = style.rows(), d = content.cols();
  Tensor out({nc, d});
  if (chosen) chosen->assign(static_cast<size_t>(nc), 0);
  for (int i = 0; i < nc; ++i) {
    int best = 0;
    for (int j = 1; j < ns; ++j)
      if (cos[i * ns + j] > cos[i * ns + best]) best = j;  // ties keep lowest index
    if (chosen) (*chosen)[static_cast<size_t>(i)] = best;
    for (int e = 0; e < d; ++e) out[i * d + e] = style[best * d + e];
  }
  return out;
}

Tensor soft_style_attention(const Tensor& content, const Tensor& style, double tau) {
  if (content.rank() != 2 || style.rank() != 2 || content.cols() != style.cols())
    throw DimensionError("soft_style_attention: incompatible " + content.shape_str() + " vs " + style.shape_str());
  if (style.rows() < 1) throw DimensionError("soft_style_attention: style set is empty");
  if (!(tau > 0.0))
    throw ParameterError("soft_style_attention: tau must be positive, got " + std::to_string(tau));
  check_rows_normalized(content, "soft_style_attention", "content");
  check_rows_normalized(style, "soft_style_attention", "style");
  const Tensor cos = matmul_nt(content, style);
  return matmul(softmax_rows(cos, tau), style);
}

double attention_divergence(const AttentionParams& p, const Tensor& z, const Tensor& z_alt) {
  p.validate();
  if (z.rank() != 2 || !z.same_shape(z_alt))
    throw DimensionError("attention_divergence: token sets must match, got " + z.shape_str() + " vs " +
                         z_alt.shape_str());
  if (z.cols() != p.dim())
    throw DimensionError("attention_divergence: token width " + std::to_string(z.cols()) +
                         " does not match dim " + std::to_string(p.dim()));
  const Tensor q_self = matmul(z, p.w_q);
  const Tensor q_alt = matmul(z_alt, p.w_q);
  const Tensor k = matmul(z, p.w_k);
  const int t = z.rows(), dh = p.head_dim();
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  double acc = 0.0;
  for (int h = 0; h < p.heads; ++h) {
    const int off = h * dh;
    auto maps = [&](const Tensor& q) {
      Tensor logits({t, t});
      for (int i = 0; i < t; ++i)
        for (int j = 0; j < t; ++j) {
          double s = 0.0;
          for (int e = 0; e < dh; ++e) s += q[i * p.dim() + off + e] * k[j * p.dim() + off + e];
          logits[i * t + j] = s * inv_sqrt;
        }
      return softmax_rows(logits, 1.0);
    };
    const Tensor a_self = maps(q_self);
    const Tensor a_alt = maps(q_alt);
    for (int i = 0; i < t; ++i) {
      std::vector<double> pr(static_cast<size_t>(t)), qr(static_cast<size_t>(t));
      for (int j = 0; j < t; ++j) {
        pr[static_cast<size_t>(j)] = a_self[i * t + j];
        qr[static_cast<size_t>(j)] = a_alt[i * t + j];
      }
      acc += kl_divergence(pr, qr);
    }
  }
  return acc / (static_cast<double>(p.heads) * t);
}

}  // namespace dacsm
