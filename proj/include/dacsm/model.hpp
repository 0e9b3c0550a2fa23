#pragma once

#include <functional>
#include <string>

#include "dacsm/backbone.hpp"
#include "dacsm/csm.hpp"

namespace dacsm {

struct ModelConfig {
  int dim = 32;
  int layers = 2;
  int heads = 4;
  int patch = 8;
  int mlp_hidden = 64;
  int classes = 4;
  int channels = 3;
  int side = 32;                       // native image side; must appear in scales
  std::vector<int> scales = {16, 24, 32};

  void validate() const;
  int native_scale_index() const;      // index of side in scales
};

// Backbone plus sub-center head. A K = 1 head is the plain classifier.
struct Model {
  ModelConfig cfg;
  BackboneParams backbone;
  SubCenterClassifier head;
};

// Draws all parameters from rng in a fixed order. The positional bank for the
// native side is drawn directly; the other banks are bilinear interpolations
// of it. Sub-centers are perturbed copies (sigma 0.01) of one classifier.
Model init_model(const ModelConfig& cfg, Rng& rng);

// Stable enumeration of every trainable tensor, used by the optimizer,
// checkpointing and the gradient-coverage tests. Order: patch projection,
// CLS, banks, per-layer norms/attention/MLP, head.
void for_each_param(Model& m, const std::function<void(const std::string&, Tensor&)>& fn);
void for_each_param(const Model& m, const std::function<void(const std::string&, const Tensor&)>& fn);

struct BoundModel {
  BoundBackbone backbone;
  NodeId head = -1;
  // Leaf ids aligned with the for_each_param enumeration order.
  std::vector<std::pair<std::string, NodeId>> leaves;
};

BoundModel bind_model(Tape& tape, const Model& m);

// Wires a bound model from existing tape nodes (one per parameter, in
// for_each_param order, shapes matching m). The gradient checker owns the
// leaves in this case.
BoundModel assemble_model(Tape& tape, const Model& m, const std::vector<NodeId>& ids);

}  // namespace dacsm
