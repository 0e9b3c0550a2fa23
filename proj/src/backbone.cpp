#include "dacsm/backbone.hpp"

#include <cmath>

#include "dacsm/linalg.hpp"

namespace dacsm {

OpCounters& counters() {
  static OpCounters c;
  return c;
}

void BackboneParams::validate() const {
  if (patch < 1 || dim < 1 || channels < 1)
    throw ParameterError("BackboneParams: patch/dim/channels must be positive");
  if (scale_sides.empty()) throw ParameterError("BackboneParams: no scales configured");
  for (size_t i = 0; i < scale_sides.size(); ++i) {
    if (scale_sides[i] < patch || scale_sides[i] % patch != 0)
      throw ParameterError("BackboneParams: scale side " + std::to_string(scale_sides[i]) +
                           " is not a positive multiple of patch " + std::to_string(patch));
    if (i > 0 && scale_sides[i] <= scale_sides[i - 1])
      throw ParameterError("BackboneParams: scale sides must be ascending and distinct");
  }
  if (pos_banks.size() != scale_sides.size())
    throw ParameterError("BackboneParams: " + std::to_string(pos_banks.size()) + " banks for " +
                         std::to_string(scale_sides.size()) + " scales");
  const int pdim = patch * patch * channels;
  if (patch_projection.rank() != 2 || patch_projection.rows() != pdim || patch_projection.cols() != dim)
    throw ParameterError("BackboneParams: patch_projection must be [" + std::to_string(pdim) + " x " +
                         std::to_string(dim) + "], got " + patch_projection.shape_str());
  if (cls_embedding.rank() != 1 || cls_embedding.dim(0) != dim)
    throw ParameterError("BackboneParams: cls_embedding must be [" + std::to_string(dim) + "], got " +
                         cls_embedding.shape_str());
  for (size_t k = 0; k < pos_banks.size(); ++k) {
    const int grid = scale_sides[k] / patch;
    const int want = grid * grid + 1;
    if (pos_banks[k].rank() != 2 || pos_banks[k].rows() != want || pos_banks[k].cols() != dim)
      throw ParameterError("BackboneParams: bank " + std::to_string(k) + " must be [" + std::to_string(want) +
                           " x " + std::to_string(dim) + "], got " + pos_banks[k].shape_str());
  }
  if (layers.empty()) throw ParameterError("BackboneParams: at least one layer required");
  for (const LayerParams& l : layers) {
    l.norm_attn.validate(dim);
    l.attn.validate();
    if (l.attn.dim() != dim)
      throw ParameterError("BackboneParams: attention dim " + std::to_string(l.attn.dim()) +
                           " does not match model dim " + std::to_string(dim));
    l.norm_mlp.validate(dim);
    l.mlp.validate(dim);
  }
}

BoundBackbone bind_backbone(Tape& tape, const BackboneParams& p) {
  p.validate();
  BoundBackbone b;
  b.params = &p;
  b.patch_projection = tape.leaf(p.patch_projection);
  b.cls_embedding = tape.leaf(p.cls_embedding);
  for (const Tensor& bank : p.pos_banks) b.pos_banks.push_back(tape.leaf(bank));
  for (const LayerParams& l : p.layers) {
    BoundLayer bl;
    bl.norm_attn = bind_layer_norm(tape, l.norm_attn);
    bl.attn = bind_attention(tape, l.attn);
    bl.norm_mlp = bind_layer_norm(tape, l.norm_mlp);
    bl.mlp = bind_mlp(tape, l.mlp);
    b.layers.push_back(bl);
  }
  return b;
}

TokenSequence tokenize(Tape& tape, const BoundBackbone& b, const Tensor& image, int scale_index) {
  const BackboneParams& p = *b.params;
  if (image.rank() != 3)
    throw DimensionError("tokenize: image must be [H x W x C], got " + image.shape_str());
  const int h = image.dim(0), w = image.dim(1), c = image.dim(2);
  if (c != p.channels)
    throw DimensionError("tokenize: image has " + std::to_string(c) + " channels, backbone expects " +
                         std::to_string(p.channels));
  if (h != w) throw ParameterError("tokenize: images must be square, got " + image.shape_str());
  if (h % p.patch != 0)
    throw ParameterError("tokenize: side " + std::to_string(h) + " is not divisible by patch " +
                         std::to_string(p.patch));
  if (scale_index < 0 || scale_index >= static_cast<int>(b.pos_banks.size()))
    throw ParameterError("tokenize: scale index " + std::to_string(scale_index) + " out of " +
                         std::to_string(b.pos_banks.size()) + " banks");
  const int grid = h / p.patch;
  const int n = grid * grid;
  const Tensor& bank = tape.value(b.pos_banks[static_cast<size_t>(scale_index)]);
  if (bank.rows() != n + 1)
    throw ParameterError("tokenize: bank " + std::to_string(scale_index) + " holds " +
                         std::to_string(bank.rows()) + " tokens but a " + std::to_string(h) + "px image yields " +
                         std::to_string(n + 1) + "; interpolate_pos_embedding builds matching banks");

  // Patch pixels flatten in (row, col, channel) order within each patch,
  // centered to [-0.5, 0.5]: unit-range inputs otherwise leave a large
  // shared component in every patch embedding.
  Tensor patches({n, p.patch * p.patch * c});
  for (int gy = 0; gy < grid; ++gy)
    for (int gx = 0; gx < grid; ++gx) {
      const int row = gy * grid + gx;
      int idx = 0;
      for (int py = 0; py < p.patch; ++py)
        for (int px = 0; px < p.patch; ++px)
          for (int ch = 0; ch < c; ++ch)
            patches[row * patches.cols() + idx++] =
                image.at(gy * p.patch + py, gx * p.patch + px, ch) - 0.5;
    }
  NodeId projected = tape.matmul(tape.leaf(std::move(patches)), b.patch_projection);
  NodeId cls_row = tape.reshape(b.cls_embedding, {1, p.dim});
  NodeId seq = tape.add(tape.concat_rows(cls_row, projected), b.pos_banks[static_cast<size_t>(scale_index)]);
  counters().tokenize_calls++;
  return TokenSequence{seq, scale_index, grid};
}

Tensor interpolate_pos_embedding(const Tensor& bank, int new_grid) {
  if (bank.rank() != 2 || bank.rows() < 2)
    throw ParameterError("interpolate_pos_embedding: bank must be [(g^2 + 1) x D], got " + bank.shape_str());
  if (new_grid < 1)
    throw ParameterError("interpolate_pos_embedding: new grid must be positive, got " + std::to_string(new_grid));
  const int n = bank.rows() - 1;
  const int g = static_cast<int>(std::lround(std::sqrt(static_cast<double>(n))));
  if (g * g != n)
    throw ParameterError("interpolate_pos_embedding: " + std::to_string(n) + " patch rows is not a square grid");
  const int d = bank.cols();
  Tensor grid({g, g, d});
  for (int i = 0; i < n; ++i)
    for (int e = 0; e < d; ++e) grid[i * d + e] = bank[(i + 1) * d + e];
  const Tensor resized = bilinear_resize(grid, new_grid, new_grid);
  Tensor out({new_grid * new_grid + 1, d});
  for (int e = 0; e < d; ++e) out[e] = bank[e];  // CLS row unchanged
  for (int i = 0; i < new_grid * new_grid; ++i)
    for (int e = 0; e < d; ++e) out[(i + 1) * d + e] = resized[i * d + e];
  return out;
}

namespace {

double mean_row_kl(const Tensor& a, const Tensor& b) {
  const int heads = a.dim(0), tq = a.dim(1), tk = a.dim(2);
  double acc = 0.0;
  for (int h = 0; h < heads; ++h)
    for (int i = 0; i < tq; ++i) {
      std::vector<double> p(static_cast<size_t>(tk)), q(static_cast<size_t>(tk));
      for (int j = 0; j < tk; ++j) {
        p[static_cast<size_t>(j)] = a.at(h, i, j);
        q[static_cast<size_t>(j)] = b.at(h, i, j);
      }
      acc += kl_divergence(p, q);
    }
  return acc / (static_cast<double>(heads) * tq);
}

}  // namespace

FeatureQuad forward_quad(Tape& tape, const BoundBackbone& b, const Tensor& src_image, int src_scale,
                         const Tensor& tgt_image, int tgt_scale, const QuadOptions& opt) {
  if (opt.noise.enabled && opt.rng == nullptr)
    throw ParameterError("forward_quad: noise enabled but no rng supplied");
  const size_t n_layers = b.layers.size();
  if (opt.noise_layers && opt.noise_layers->size() != n_layers)
    throw ParameterError("forward_quad: noise layer mask has " + std::to_string(opt.noise_layers->size()) +
                         " entries for " + std::to_string(n_layers) + " layers");

  // Tokenize each image exactly once; the cross streams start from the same
  // token nodes as their self streams.
  const TokenSequence ts = tokenize(tape, b, src_image, src_scale);
  const TokenSequence tt = tokenize(tape, b, tgt_image, tgt_scale);
  NodeId zs = ts.tokens, zt = tt.tokens, zst = ts.tokens, zts = tt.tokens;

  FeatureQuad quad;
  for (size_t l = 0; l < n_layers; ++l) {
    const BoundLayer& layer = b.layers[l];
    NoiseSpec ns = opt.noise;
    ns.enabled = opt.noise.enabled && (!opt.noise_layers || (*opt.noise_layers)[l]);

    // Pre-layer normalized views. The self-stream views double as the
    // key/value side of the cross streams, so a degenerate source == target
    // pass executes identical instruction sequences in both streams.
    NodeId ln_s = layer_norm(tape, layer.norm_attn, zs);
    NodeId ln_t = layer_norm(tape, layer.norm_attn, zt);
    NodeId ln_st = layer_norm(tape, layer.norm_attn, zst);
    NodeId ln_ts = layer_norm(tape, layer.norm_attn, zts);

    AttendResult a_s = attend(tape, layer.attn, ln_s, ln_s);
    AttendResult a_t = attend(tape, layer.attn, ln_t, ln_t);
    // Cross streams: noise draw order is fixed (s->t first, then t->s).
    AttendResult a_st = attend(tape, layer.attn, ln_st, ln_t, ns, opt.rng);
    AttendResult a_ts = attend(tape, layer.attn, ln_ts, ln_s, ns, opt.rng);

    if (opt.measure_query_drift) {
      // Counterfactual map: queries from the source self stream instead of
      // the evolving s->t stream, same key side. Equal at layer 0 where the
      // streams coincide; positive once the s->t state has drifted.
      AttendResult a_cf = attend(tape, layer.attn, ln_s, ln_t);
      quad.taps.query_drift.push_back(mean_row_kl(a_st.weights, a_cf.weights));
    }

    const NodeId base_st = opt.residual == ResidualSource::QuerySide ? zst : zt;
    const NodeId base_ts = opt.residual == ResidualSource::QuerySide ? zts : zs;
    zs = residual_block(tape, zs, a_s.out, layer.norm_mlp, layer.mlp);
    zt = residual_block(tape, zt, a_t.out, layer.norm_mlp, layer.mlp);
    zst = residual_block(tape, base_st, a_st.out, layer.norm_mlp, layer.mlp);
    zts = residual_block(tape, base_ts, a_ts.out, layer.norm_mlp, layer.mlp);

    quad.taps.layers_s.push_back(zs);
    quad.taps.layers_t.push_back(zt);
    quad.taps.attn_s.push_back(std::move(a_s.weights));
    quad.taps.attn_t.push_back(std::move(a_t.weights));
    quad.taps.attn_s2t.push_back(std::move(a_st.weights));
    quad.taps.attn_t2s.push_back(std::move(a_ts.weights));
  }
  counters().backbone_forwards++;
  quad.f_s = tape.take_row(zs, 0);
  quad.f_t = tape.take_row(zt, 0);
  quad.f_s2t = tape.take_row(zst, 0);
  quad.f_t2s = tape.take_row(zts, 0);
  return quad;
}

SelfForward forward_self(Tape& tape, const BoundBackbone& b, const Tensor& image, int scale_index) {
  const TokenSequence seq = tokenize(tape, b, image, scale_index);
  NodeId z = seq.tokens;
  SelfForward out;
  for (const BoundLayer& layer : b.layers) {
    NodeId ln = layer_norm(tape, layer.norm_attn, z);
    AttendResult a = attend(tape, layer.attn, ln, ln);
    z = residual_block(tape, z, a.out, layer.norm_mlp, layer.mlp);
    out.attn.push_back(std::move(a.weights));
  }
  counters().backbone_forwards++;
  out.tokens_out = z;
  out.feature = tape.take_row(z, 0);
  return out;
}

NodeId classify(Tape& tape, NodeId weight, NodeId feature) {
  const Tensor& w = tape.value(weight);
  const Tensor& f = tape.value(feature);
  if (w.rank() != 2 || f.rank() != 1 || w.cols() != f.dim(0))
    throw DimensionError("classify: weight " + w.shape_str() + " incompatible with feature " + f.shape_str());
  NodeId w3 = tape.reshape(weight, {w.rows(), 1, w.cols()});
  return tape.subcenter_pick(w3, feature, 0);
}

}  // namespace dacsm
