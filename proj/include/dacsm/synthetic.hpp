#pragma once

#include <cstdint>
#include <vector>

#include "dacsm/rng.hpp"
#include "dacsm/tensor.hpp"

namespace dacsm {

// Rendering style of one domain. style_shift moves channel means along a
// fixed channel pattern, contrast scales the shape signal, texture_noise adds
// per-pixel Gaussian clutter, and [scale_min, scale_max] bounds the object
// size as a fraction of the image side.
struct DomainStyle {
  double style_shift = 0.0;
  double contrast = 1.0;
  double texture_noise = 0.0;
  double scale_min = 0.55;
  double scale_max = 0.85;
};

// Two-domain shape-classification benchmark: class identity is the drawn
// shape (disk, square, plus, cross, ring); the domains differ in rendering
// style and object scale, never in shape semantics.
struct SyntheticDomainSpec {
  int classes = 4;
  int per_class = 20;
  int side = 32;
  int channels = 3;
  DomainStyle source;
  DomainStyle target;
  std::uint64_t seed = 99;

  void validate() const;
};

struct DomainDataset {
  std::vector<Tensor> source_images;  // [side x side x channels]
  std::vector<int> source_labels;
  std::vector<Tensor> target_images;
  // Ground truth of the target set. Retained for evaluation only; the
  // training path never reads it.
  std::vector<int> target_hidden_labels;
};

// Deterministic in the spec: equal specs produce equal datasets. Samples are
// ordered class-major (all of class 0, then class 1, ...).
DomainDataset generate_domains(const SyntheticDomainSpec& spec);

// One rendered sample, exposed for tests and tools.
Tensor render_shape(int label, int side, int channels, double size_frac, double jitter_y, double jitter_x,
                    const DomainStyle& style, Rng& rng);

}  // namespace dacsm
