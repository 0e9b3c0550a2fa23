#pragma once

#include <iosfwd>
#include <string>

#include "dacsm/losses.hpp"
#include "dacsm/model.hpp"
#include "dacsm/synthetic.hpp"

namespace dacsm {

struct TrainConfig {
  ModelConfig model;
  int epochs = 24;
  int warmup_epochs = 4;     // epochs without the target pseudo-label term
  int pseudo_refresh = 4;    // re-assign pseudo-labels every n epochs
  int batch_size = 16;
  double learning_rate = 0.08;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  int crop_pad = 4;          // source augmentation: resize to side+pad, crop side
  bool noise_enabled = true;
  double noise_sigma = 0.05;
  std::vector<bool> noise_layers;  // empty = every layer
  LossWeights weights;
  DistillSpec distill;
  std::uint64_t seed = 7;

  void validate() const;
};

struct Evaluation {
  double accuracy = 0.0;  // macro average over classes present in the labels
  std::vector<double> per_class;
  std::vector<int> predictions;
  std::vector<Tensor> features;  // CLS feature per image
  double mean_attention_entropy = 0.0;
};

// Scores a model on labeled images: one native-resolution self-attention
// forward per image, prediction = argmax class of the per-class best
// sub-center score. No noise, no cross streams, independent of K.
Evaluation evaluate(const Model& m, const std::vector<Tensor>& images, const std::vector<int>& labels);

// CLS features of images at the native scale (one forward each).
std::vector<Tensor> embed_images(const Model& m, const std::vector<Tensor>& images);

// One target sample paired with its nearest source sample in CLS-feature
// space. The pseudo-label is always the paired source sample's label.
struct DomainPair {
  int source_index = -1;
  int target_index = -1;
  int pseudo_label = -1;
  double distance = 0.0;  // Euclidean feature distance of the pair
};

// Pairs every target image with its nearest source image (Euclidean on CLS
// features; ties pick the lowest source index). Entry i pairs target i.
std::vector<DomainPair> assign_pseudo_labels(const Model& m, const std::vector<Tensor>& source_images,
                                             const std::vector<int>& source_labels,
                                             const std::vector<Tensor>& target_images);

// Proxy A-distance between the two feature sets: a logistic-regression
// domain discriminator is trained on the even-index features and tested on
// the odd-index features; returns 2 * (1 - 2 * test_error), clamped to
// [0, 2]. Deterministic.
double a_distance_proxy(const std::vector<Tensor>& source_features,
                        const std::vector<Tensor>& target_features);

struct EpochRow {
  int epoch = 0;
  bool has_loss = false;  // epoch 0 (pre-training evaluation) has none
  LossReport mean_loss;
  double target_accuracy = 0.0;
  std::vector<double> per_class;
  double a_distance = 0.0;
  double attention_entropy = 0.0;
};

struct TrainResult {
  Model model;
  std::vector<EpochRow> history;  // epoch 0 row plus one per training epoch
};

// Full adaptation run. Deterministic in (cfg, data): two runs with the same
// inputs produce byte-identical metrics. Progress lines go to *progress when
// non-null.
TrainResult train(const TrainConfig& cfg, const DomainDataset& data, std::ostream* progress = nullptr);

// Shortest-round-trip decimal formatting used for all metrics output.
std::string format_g17(double v);

// CSV serialization of a training history (header plus one row per epoch).
std::string metrics_csv(const std::vector<EpochRow>& history, int classes);

}  // namespace dacsm
