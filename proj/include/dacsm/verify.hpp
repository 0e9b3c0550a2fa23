#pragma once

#include <functional>
#include <string>
#include <vector>

#include "dacsm/autodiff.hpp"
#include "dacsm/rng.hpp"

namespace dacsm {

struct PropertyResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

// Central-difference gradient check. build() must reconstruct the same
// computation from the given leaves on a fresh tape every call (any
// randomness inside must be internally seeded). Analytic gradients come from
// one backward pass; each checked coordinate is then perturbed by +-step.
// Relative error per coordinate: |a - n| / (|a| + |n| + 1e-6), which keeps
// near-zero gradients from amplifying finite-difference noise.
struct GradCheck {
  double max_rel_err = 0.0;
  int coords_checked = 0;
  std::string worst;
};

GradCheck check_gradients(const std::function<NodeId(Tape&, const std::vector<NodeId>&)>& build,
                          std::vector<Tensor> inputs, double step = 1e-5, int coords_per_input = -1,
                          Rng* pick = nullptr);

// Soft-to-hard style matching: sup-norm gap between temperature-tau soft
// style attention and the hard swap shrinks monotonically and vanishes as
// tau -> 0, on margin-checked instances.
std::vector<PropertyResult> verify_appendix_a();

// Attention-shift bounds: per-row Pinsker and the singular-value contraction
// hold exactly (tolerance 1e-10); the combined aggregate bound is only
// measured and reported.
std::vector<PropertyResult> verify_appendix_b();

// Sub-center specialization on constructed, well-separated scale clusters.
std::vector<PropertyResult> verify_appendix_c();

// Per-op and end-to-end finite-difference gradient checks, 100 seeded trials.
std::vector<PropertyResult> verify_gradients();

// Dispatch: "all", "appendix-a", "appendix-b", "appendix-c" or "gradients".
// Unknown names raise ConfigError.
std::vector<PropertyResult> verify_suite(const std::string& name);

}  // namespace dacsm
