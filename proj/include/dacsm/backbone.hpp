#pragma once

#include <cstdint>
#include <vector>

#include "dacsm/attention.hpp"

namespace dacsm {

// One transformer layer: pre-norm attention followed by a pre-norm MLP.
struct LayerParams {
  LayerNormParams norm_attn;
  AttentionParams attn;
  LayerNormParams norm_mlp;
  MlpParams mlp;
};

// Parameter-shared patch-token transformer. One positional bank per resize
// scale; the tokenizer picks the bank by scale index. The classifier is not
// part of the backbone (the sub-center head owns all classifier weights).
struct BackboneParams {
  int patch = 8;
  int dim = 32;
  int channels = 3;
  std::vector<int> scale_sides;   // resize side per bank, ascending
  Tensor patch_projection;        // [(patch^2 * channels) x dim]
  Tensor cls_embedding;           // [dim]
  std::vector<Tensor> pos_banks;  // bank k: [(side_k/patch)^2 + 1 x dim]
  std::vector<LayerParams> layers;

  void validate() const;
};

struct BoundLayer {
  BoundLayerNorm norm_attn;
  BoundAttention attn;
  BoundLayerNorm norm_mlp;
  BoundMlp mlp;
};

struct BoundBackbone {
  const BackboneParams* params = nullptr;
  NodeId patch_projection = -1;
  NodeId cls_embedding = -1;
  std::vector<NodeId> pos_banks;
  std::vector<BoundLayer> layers;
};

BoundBackbone bind_backbone(Tape& tape, const BackboneParams& p);

// Token sequence produced by the tokenizer: CLS at row 0, then patch tokens
// in row-major patch-grid order.
struct TokenSequence {
  NodeId tokens = -1;  // [(N+1) x dim]
  int scale_index = 0;
  int grid = 0;  // patches per side
};

// Splits an [H x W x C] image into non-overlapping patches (flattened in
// (row, col, channel) order), projects them, prepends the CLS embedding and
// adds the positional bank for scale_index. H and W must be divisible by the
// patch size and the bank must have matching token count.
TokenSequence tokenize(Tape& tape, const BoundBackbone& b, const Tensor& image, int scale_index);

// Resamples the patch rows of a positional bank [(g^2 + 1) x D] to a new grid
// side by corner-aligned bilinear interpolation; the CLS row is copied.
Tensor interpolate_pos_embedding(const Tensor& bank, int new_grid);

enum class ResidualSource {
  QuerySide,     // residual taken from the stream that supplies the queries
  KeyValueSide,  // deliberately wrong wiring, kept for the drift diagnostic
};

// Per-layer observables of a quad forward.
struct StreamTaps {
  std::vector<NodeId> layers_s, layers_t;                    // self streams after each layer
  std::vector<Tensor> attn_s, attn_t, attn_s2t, attn_t2s;    // [H x Tq x Tkv]
  std::vector<double> query_drift;                           // per layer, optional
};

// CLS features of the four streams produced by one paired pass.
struct FeatureQuad {
  NodeId f_s = -1, f_s2t = -1, f_t2s = -1, f_t = -1;
  StreamTaps taps;
};

struct QuadOptions {
  NoiseSpec noise;                        // cross-attention K/V noise
  Rng* rng = nullptr;                     // required when noise.enabled
  const std::vector<bool>* noise_layers = nullptr;  // nullptr = every layer
  ResidualSource residual = ResidualSource::QuerySide;
  bool measure_query_drift = false;
};

// One paired pass through the shared backbone: tokenizes each image exactly
// once, then per layer runs the two self streams (source-to-source and
// target-to-target) and the two cross streams. Cross streams carry their own
// evolving state on the query side; keys and values come from the other
// domain's self stream at the same depth (its pre-layer state). Noise touches
// only the cross streams.
FeatureQuad forward_quad(Tape& tape, const BoundBackbone& b, const Tensor& src_image, int src_scale,
                         const Tensor& tgt_image, int tgt_scale, const QuadOptions& opt = {});

struct SelfForward {
  NodeId feature = -1;             // CLS feature [dim]
  NodeId tokens_out = -1;          // final token matrix
  std::vector<Tensor> attn;        // per layer
};

// Single self-attention pass (the inference path): one tokenize, L layers,
// no noise, no cross streams.
SelfForward forward_self(Tape& tape, const BoundBackbone& b, const Tensor& image, int scale_index);

// Plain linear classifier logits from a [C x D] weight matrix. Bias-free.
NodeId classify(Tape& tape, NodeId weight, NodeId feature);

// Process-wide instrumentation used by the inference-path tests.
struct OpCounters {
  std::uint64_t tokenize_calls = 0;
  std::uint64_t backbone_forwards = 0;
  void reset() { tokenize_calls = backbone_forwards = 0; }
};

OpCounters& counters();

}  // namespace dacsm
