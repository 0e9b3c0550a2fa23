#include "dacsm/csm.hpp"

namespace dacsm {

int ScaleSet::index_of(int side) const {
  for (size_t i = 0; i < sides.size(); ++i)
    if (sides[i] == side) return static_cast<int>(i);
  return -1;
}

void ScaleSet::validate(int patch) const {
  if (sides.empty()) throw ParameterError("ScaleSet: empty");
  if (patch < 1) throw ParameterError("ScaleSet: patch must be positive");
  for (size_t i = 0; i < sides.size(); ++i) {
    if (sides[i] < patch || sides[i] % patch != 0)
      throw ParameterError("ScaleSet: side " + std::to_string(sides[i]) +
                           " is not a positive multiple of patch " + std::to_string(patch));
    if (i > 0 && sides[i] <= sides[i - 1])
      throw ParameterError("ScaleSet: sides must be ascending and distinct");
  }
}

void SubCenterClassifier::validate() const {
  if (weights.rank() != 3)
    throw ParameterError("SubCenterClassifier: weights must be [C x K x D], got " + weights.shape_str());
  if (weights.dim(0) < 1 || weights.dim(1) < 1 || weights.dim(2) < 1)
    throw ParameterError("SubCenterClassifier: degenerate shape " + weights.shape_str());
}

SubCenterClassifier init_subcenters(int classes, int subcenters, int dim, double perturb_sigma, Rng& rng) {
  if (classes < 1 || subcenters < 1 || dim < 1)
    throw ParameterError("init_subcenters: classes/subcenters/dim must be positive");
  if (perturb_sigma < 0.0) throw ParameterError("init_subcenters: perturb sigma must be nonnegative");
  Tensor base({classes, dim});
  const double std = std::sqrt(2.0 / (classes + dim));
  for (int i = 0; i < base.size(); ++i) base[i] = rng.normal(0.0, std);
  SubCenterClassifier head;
  head.weights = Tensor({classes, subcenters, dim});
  for (int c = 0; c < classes; ++c)
    for (int k = 0; k < subcenters; ++k)
      for (int e = 0; e < dim; ++e)
        head.weights[(c * subcenters + k) * dim + e] =
            base[c * dim + e] + (perturb_sigma == 0.0 ? 0.0 : rng.normal(0.0, perturb_sigma));
  return head;
}

Tensor rescale(const Tensor& image, int side) {
  if (image.rank() != 3)
    throw DimensionError("rescale: image must be [H x W x C], got " + image.shape_str());
  if (side < 1) throw ParameterError("rescale: side must be positive, got " + std::to_string(side));
  if (image.dim(0) == side && image.dim(1) == side) return image;
  return bilinear_resize(image, side, side);
}

NodeId source_logits(Tape& tape, NodeId weights, NodeId feature, int scale_index) {
  return tape.subcenter_pick(weights, feature, scale_index);
}

NodeId target_logits(Tape& tape, NodeId weights, NodeId feature, std::vector<int>* chosen) {
  return tape.subcenter_max(weights, feature, chosen);
}

std::vector<Tensor> specialization_probe(const SubCenterClassifier& head, const FeatureBank& bank) {
  head.validate();
  const int c = head.classes(), k = head.subcenters(), d = head.dim();
  if (static_cast<int>(bank.size()) != c)
    throw DataError("specialization_probe: bank has " + std::to_string(bank.size()) + " classes, head has " +
                    std::to_string(c));
  std::vector<Tensor> out;
  out.reserve(static_cast<size_t>(c));
  for (int ci = 0; ci < c; ++ci) {
    if (static_cast<int>(bank[static_cast<size_t>(ci)].size()) != k)
      throw DataError("specialization_probe: class " + std::to_string(ci) + " has " +
                      std::to_string(bank[static_cast<size_t>(ci)].size()) + " scale cells, head has " +
                      std::to_string(k));
    Tensor m({k, k});
    for (int ki = 0; ki < k; ++ki) {
      const auto& cell = bank[static_cast<size_t>(ci)][static_cast<size_t>(ki)];
      if (cell.empty())
        throw DataError("specialization_probe: empty bank cell (class " + std::to_string(ci) + ", scale " +
                        std::to_string(ki) + ")");
      for (const Tensor& f : cell) {
        if (f.rank() != 1 || f.dim(0) != d)
          throw DimensionError("specialization_probe: feature " + f.shape_str() + " does not match dim " +
                               std::to_string(d));
        int best = 0;
        double best_score = -1e300;
        for (int kk = 0; kk < k; ++kk) {
          double s = 0.0;
          for (int e = 0; e < d; ++e) s += head.weights[(ci * k + kk) * d + e] * f[e];
          if (s > best_score) {  // strict: ties keep the lowest index
            best_score = s;
            best = kk;
          }
        }
        m[ki * k + best] += 1.0;
      }
      for (int kk = 0; kk < k; ++kk) m[ki * k + kk] /= static_cast<double>(cell.size());
    }
    out.push_back(std::move(m));
  }
  return out;
}

}  // namespace dacsm
