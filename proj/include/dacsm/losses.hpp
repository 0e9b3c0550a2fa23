#pragma once

#include "dacsm/backbone.hpp"
#include "dacsm/csm.hpp"

namespace dacsm {

struct LossWeights {
  double cls_s = 1.0;
  double cls_s2t = 1.0;
  double dst = 1.0;
  double cls_t = 1.0;
  double style = 0.01;
};

struct DistillSpec {
  double tau = 2.0;
  bool teacher_first = true;  // KL(teacher || student); flip for the reverse
};

// Detached per-term values of one total_loss evaluation. cls_t is reported as
// 0 with has_cls_t = false while pseudo-labels are absent (warm-up).
struct LossReport {
  double cls_s = 0.0, cls_s2t = 0.0, dst = 0.0, cls_t = 0.0, style = 0.0, total = 0.0;
  bool has_cls_t = false;
};

// One-hot distribution over `classes` entries; LabelError outside [0, C).
Tensor one_hot(int label, int classes);

// Softmax cross-entropy of logits against a target distribution.
NodeId cross_entropy(Tape& tape, NodeId logits, Tensor target);

// KL between tau-softened softmaxes. The teacher side is stop-gradient.
NodeId distillation(Tape& tape, NodeId student_logits, NodeId teacher_logits, const DistillSpec& spec);

// Mean over layers of || mu_s - mu_t ||_2 + || std_s - std_t ||_2 on token
// statistics. The two lists pair up by depth and must have equal length.
NodeId style_loss(Tape& tape, const std::vector<NodeId>& src_layers, const std::vector<NodeId>& tgt_layers);

struct TotalLossInputs {
  const FeatureQuad* quad = nullptr;
  NodeId head = -1;                    // [C x K x D] weights node
  Tensor source_target;                // distribution over classes, required
  const Tensor* pseudo_target = nullptr;  // nullptr during warm-up
  int scale_index = 0;                 // sub-center of the source batch
  LossWeights weights;
  DistillSpec distill;
};

// weights.cls_s * CE(source at scale k) + weights.cls_s2t * CE(translated
// source at scale k) + weights.dst * KL(t->s teacher, target student)
// + weights.cls_t * CE(target vs pseudo) + weights.style * style term.
NodeId total_loss(Tape& tape, const TotalLossInputs& in, LossReport* report = nullptr);

}  // namespace dacsm
