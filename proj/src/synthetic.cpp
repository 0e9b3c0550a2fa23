#include "dacsm/synthetic.hpp"

#include <algorithm>
#include <cmath>

#include "dacsm/errors.hpp"

namespace dacsm {

namespace {

constexpr int kShapeCount = 5;

double clamp01(double v) { return std::min(1.0, std::max(0.0, v)); }

// Soft-edged membership masks, ~1px falloff so bilinear rescaling stays well
// behaved. dy/dx are offsets from the object center, r the half-size.
double shape_mask(int label, double dy, double dx, double r) {
  switch (label) {
    case 0: {  // disk
      const double d = std::sqrt(dy * dy + dx * dx);
      return clamp01(r - d + 0.5);
    }
    case 1: {  // filled square
      const double d = std::max(std::abs(dy), std::abs(dx));
      return clamp01(r - d + 0.5);
    }
    case 2: {  // plus
      const double w = std::max(r / 2.5, 1.6);
      const double horiz = std::min(w - std::abs(dy), r - std::abs(dx));
      const double vert = std::min(w - std::abs(dx), r - std::abs(dy));
      return clamp01(std::max(horiz, vert) + 0.5);
    }
    case 3: {  // diagonal cross
      const double w = std::max(r / 2.5, 1.6);
      const double u = (dx + dy) * 0.70710678118654752440;
      const double v = (dx - dy) * 0.70710678118654752440;
      const double d1 = std::min(w - std::abs(v), r - std::abs(u));
      const double d2 = std::min(w - std::abs(u), r - std::abs(v));
      return clamp01(std::max(d1, d2) + 0.5);
    }
    case 4: {  // ring
      const double d = std::sqrt(dy * dy + dx * dx);
      return clamp01(0.35 * r - std::abs(d - 0.72 * r) + 0.5);
    }
    default:
      throw LabelError("render_shape: label " + std::to_string(label) + " has no shape");
  }
}

// Per-channel direction of the style shift.
double channel_pattern(int ch) {
  static const double pattern[3] = {1.0, -0.6, 0.3};
  return pattern[ch % 3];
}

}  // namespace

void SyntheticDomainSpec::validate() const {
  if (classes < 1)
    throw ParameterError("SyntheticDomainSpec: at least one class required, got " + std::to_string(classes));
  if (classes > kShapeCount)
    throw ParameterError("SyntheticDomainSpec: only " + std::to_string(kShapeCount) + " shapes available, got " +
                         std::to_string(classes) + " classes");
  if (per_class < 1) throw ParameterError("SyntheticDomainSpec: per_class must be positive");
  if (side < 8) throw ParameterError("SyntheticDomainSpec: side must be at least 8, got " + std::to_string(side));
  if (channels < 1) throw ParameterError("SyntheticDomainSpec: channels must be positive");
  for (const DomainStyle* s : {&source, &target}) {
    if (!(s->scale_min > 0.0) || s->scale_max > 1.0 || s->scale_min > s->scale_max)
      throw ParameterError("SyntheticDomainSpec: scale range [" + std::to_string(s->scale_min) + ", " +
                           std::to_string(s->scale_max) + "] must satisfy 0 < min <= max <= 1");
    if (!(s->contrast > 0.0)) throw ParameterError("SyntheticDomainSpec: contrast must be positive");
    if (s->texture_noise < 0.0) throw ParameterError("SyntheticDomainSpec: texture noise must be nonnegative");
  }
}

Tensor render_shape(int label, int side, int channels, double size_frac, double jitter_y, double jitter_x,
                    const DomainStyle& style, Rng& rng) {
  const double cy = side / 2.0 + jitter_y;
  const double cx = side / 2.0 + jitter_x;
  const double r = size_frac * (side / 2.0 - 2.0);
  Tensor img({side, side, channels});
  for (int y = 0; y < side; ++y)
    for (int x = 0; x < side; ++x) {
      const double m = shape_mask(label, y + 0.5 - cy, x + 0.5 - cx, r);
      const double gray = 0.15 + 0.8 * m;
      for (int ch = 0; ch < channels; ++ch) {
        double v = style.contrast * gray + style.style_shift * channel_pattern(ch);
        if (style.texture_noise > 0.0) v += style.texture_noise * rng.normal();
        img[(static_cast<size_t>(y) * side + x) * channels + ch] = v;
      }
    }
  return img;
}

namespace {

void fill_domain(const SyntheticDomainSpec& spec, const DomainStyle& style, Rng& rng,
                 std::vector<Tensor>& images, std::vector<int>& labels) {
  const double jitter_amp = spec.side * 0.06;
  for (int c = 0; c < spec.classes; ++c)
    for (int i = 0; i < spec.per_class; ++i) {
      const double size_frac = rng.uniform(style.scale_min, style.scale_max);
      const double jy = rng.uniform(-jitter_amp, jitter_amp);
      const double jx = rng.uniform(-jitter_amp, jitter_amp);
      images.push_back(render_shape(c, spec.side, spec.channels, size_frac, jy, jx, style, rng));
      labels.push_back(c);
    }
}

}  // namespace

DomainDataset generate_domains(const SyntheticDomainSpec& spec) {
  spec.validate();
  DomainDataset pair;
  Rng rng_src(Rng::derive(spec.seed, 0x5151));
  Rng rng_tgt(Rng::derive(spec.seed, 0x7171));
  fill_domain(spec, spec.source, rng_src, pair.source_images, pair.source_labels);
  fill_domain(spec, spec.target, rng_tgt, pair.target_images, pair.target_hidden_labels);
  return pair;
}

}  // namespace dacsm
