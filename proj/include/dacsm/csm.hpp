#pragma once

#include <vector>

#include "dacsm/autodiff.hpp"
#include "dacsm/rng.hpp"

namespace dacsm {

// Resize targets (side lengths) for cross-scale matching, ascending. One
// sub-center and one positional bank exist per entry.
struct ScaleSet {
  std::vector<int> sides;

  int count() const { return static_cast<int>(sides.size()); }
  int index_of(int side) const;  // -1 when absent
  void validate(int patch) const;
};

// Sub-center classifier: K weight vectors per class, [C x K x D]. A K = 1
// instance is the plain linear classifier.
struct SubCenterClassifier {
  Tensor weights;

  int classes() const { return weights.rank() == 3 ? weights.dim(0) : 0; }
  int subcenters() const { return weights.rank() == 3 ? weights.dim(1) : 0; }
  int dim() const { return weights.rank() == 3 ? weights.dim(2) : 0; }
  void validate() const;
};

// K perturbed copies of one randomly initialized classifier; the copies
// differ by elementwise N(0, perturb_sigma^2) draws.
SubCenterClassifier init_subcenters(int classes, int subcenters, int dim, double perturb_sigma, Rng& rng);

// Bilinear resize of an [H x W x C] image to side x side.
Tensor rescale(const Tensor& image, int side);

// Source-side scores: every class at the known sub-center scale_index.
NodeId source_logits(Tape& tape, NodeId weights, NodeId feature, int scale_index);

// Target-side scores: every class at its best sub-center (ties pick the
// lowest index); the gradient flows through the selected branch.
NodeId target_logits(Tape& tape, NodeId weights, NodeId feature, std::vector<int>* chosen = nullptr);

// features[c][k] holds CLS features of class c rendered at scale index k.
using FeatureBank = std::vector<std::vector<std::vector<Tensor>>>;

// One [K x K] matrix per class; entry (k, k') is the fraction of cell (c, k)
// whose highest-scoring sub-center for class c is k'. Every cell must hold at
// least one feature.
std::vector<Tensor> specialization_probe(const SubCenterClassifier& head, const FeatureBank& bank);

}  // namespace dacsm
