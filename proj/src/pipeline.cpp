#include "dacsm/pipeline.hpp"

#include <cmath>
#include <cstdio>
#include <ostream>

namespace dacsm {

void TrainConfig::validate() const {
  model.validate();
  if (epochs < 0) throw ParameterError("TrainConfig: epochs must be nonnegative");
  if (warmup_epochs < 0) throw ParameterError("TrainConfig: warmup_epochs must be nonnegative");
  if (pseudo_refresh < 1) throw ParameterError("TrainConfig: pseudo_refresh must be positive");
  if (batch_size < 1) throw ParameterError("TrainConfig: batch_size must be positive");
  if (learning_rate < 0.0) throw ParameterError("TrainConfig: learning_rate must be nonnegative");
  if (momentum < 0.0 || momentum >= 1.0) throw ParameterError("TrainConfig: momentum must be in [0, 1)");
  if (weight_decay < 0.0) throw ParameterError("TrainConfig: weight_decay must be nonnegative");
  if (crop_pad < 0) throw ParameterError("TrainConfig: crop_pad must be nonnegative");
  if (noise_sigma < 0.0) throw ParameterError("TrainConfig: noise_sigma must be nonnegative");
  if (!noise_layers.empty() && static_cast<int>(noise_layers.size()) != model.layers)
    throw ParameterError("TrainConfig: noise_layers has " + std::to_string(noise_layers.size()) +
                         " entries for " + std::to_string(model.layers) + " layers");
  if (!(distill.tau > 0.0)) throw ParameterError("TrainConfig: distillation temperature must be positive");
}

namespace {

void check_labels(const std::vector<int>& labels, int classes, const char* who) {
  for (size_t i = 0; i < labels.size(); ++i)
    if (labels[i] < 0 || labels[i] >= classes)
      throw LabelError(std::string(who) + ": label " + std::to_string(labels[i]) + " at index " +
                       std::to_string(i) + " outside [0, " + std::to_string(classes) + ")");
}

double entropy_of(const Tensor& attn) {
  double acc = 0.0;
  const int heads = attn.dim(0), tq = attn.dim(1), tk = attn.dim(2);
  for (int h = 0; h < heads; ++h)
    for (int i = 0; i < tq; ++i) {
      double e = 0.0;
      for (int j = 0; j < tk; ++j) {
        const double p = attn.at(h, i, j);
        if (p > 0.0) e -= p * std::log(p);
      }
      acc += e;
    }
  return acc / (static_cast<double>(heads) * tq);
}

}  // namespace

Evaluation evaluate(const Model& m, const std::vector<Tensor>& images, const std::vector<int>& labels) {
  if (images.empty()) throw DataError("evaluate: empty image set");
  if (images.size() != labels.size())
    throw DataError("evaluate: " + std::to_string(images.size()) + " images vs " + std::to_string(labels.size()) +
                    " labels");
  const int classes = m.head.classes();
  check_labels(labels, classes, "evaluate");
  const int native = m.cfg.native_scale_index();

  Evaluation ev;
  std::vector<int> correct(static_cast<size_t>(classes), 0), totals(static_cast<size_t>(classes), 0);
  double entropy = 0.0;
  for (size_t i = 0; i < images.size(); ++i) {
    Tape tape;
    BoundModel bm = bind_model(tape, m);
    SelfForward fwd = forward_self(tape, bm.backbone, images[i], native);
    NodeId logits = target_logits(tape, bm.head, fwd.feature);
    const Tensor& lv = tape.value(logits);
    int pred = 0;
    for (int c = 1; c < classes; ++c)
      if (lv[c] > lv[pred]) pred = c;  // ties keep the lowest class
    ev.predictions.push_back(pred);
    ev.features.push_back(tape.value(fwd.feature));
    totals[static_cast<size_t>(labels[i])]++;
    if (pred == labels[i]) correct[static_cast<size_t>(labels[i])]++;
    double e = 0.0;
    for (const Tensor& a : fwd.attn) e += entropy_of(a);
    entropy += e / static_cast<double>(fwd.attn.size());
  }
  ev.mean_attention_entropy = entropy / static_cast<double>(images.size());

  int present = 0;
  double acc_sum = 0.0;
  ev.per_class.assign(static_cast<size_t>(classes), 0.0);
  for (int c = 0; c < classes; ++c) {
    if (totals[static_cast<size_t>(c)] == 0) continue;  // absent classes are skipped in the macro average
    ev.per_class[static_cast<size_t>(c)] =
        static_cast<double>(correct[static_cast<size_t>(c)]) / totals[static_cast<size_t>(c)];
    acc_sum += ev.per_class[static_cast<size_t>(c)];
    present++;
  }
  ev.accuracy = acc_sum / present;
  return ev;
}

std::vector<Tensor> embed_images(const Model& m, const std::vector<Tensor>& images) {
  const int native = m.cfg.native_scale_index();
  std::vector<Tensor> out;
  out.reserve(images.size());
  for (const Tensor& img : images) {
    Tape tape;
    BoundModel bm = bind_model(tape, m);
    SelfForward fwd = forward_self(tape, bm.backbone, img, native);
    out.push_back(tape.value(fwd.feature));
  }
  return out;
}

std::vector<DomainPair> assign_pseudo_labels(const Model& m, const std::vector<Tensor>& source_images,
                                             const std::vector<int>& source_labels,
                                             const std::vector<Tensor>& target_images) {
  if (source_images.empty() || target_images.empty())
    throw DataError("assign_pseudo_labels: both domains must be non-empty");
  if (source_images.size() != source_labels.size())
    throw DataError("assign_pseudo_labels: " + std::to_string(source_images.size()) + " source images vs " +
                    std::to_string(source_labels.size()) + " labels");
  check_labels(source_labels, m.head.classes(), "assign_pseudo_labels");
  const std::vector<Tensor> fs = embed_images(m, source_images);
  const std::vector<Tensor> ft = embed_images(m, target_images);
  std::vector<DomainPair> out;
  out.reserve(ft.size());
  for (size_t i = 0; i < ft.size(); ++i) {
    const Tensor& f = ft[i];
    int best = 0;
    double best_d = 1e300;
    for (size_t j = 0; j < fs.size(); ++j) {
      double d = 0.0;
      for (int e = 0; e < f.size(); ++e) {
        const double diff = f[e] - fs[j][e];
        d += diff * diff;
      }
      if (d < best_d) {  // strict: ties keep the lowest source index
        best_d = d;
        best = static_cast<int>(j);
      }
    }
    DomainPair p;
    p.source_index = best;
    p.target_index = static_cast<int>(i);
    p.pseudo_label = source_labels[static_cast<size_t>(best)];
    p.distance = std::sqrt(best_d);
    out.push_back(p);
  }
  return out;
}

double a_distance_proxy(const std::vector<Tensor>& source_features,
                        const std::vector<Tensor>& target_features) {
  if (source_features.size() < 4 || target_features.size() < 4)
    throw DataError("a_distance_proxy: need at least 4 features per domain, got " +
                    std::to_string(source_features.size()) + " and " + std::to_string(target_features.size()));
  const int d = source_features[0].size();
  for (const auto* set : {&source_features, &target_features})
    for (const Tensor& f : *set)
      if (f.rank() != 1 || f.size() != d)
        throw DimensionError("a_distance_proxy: feature " + f.shape_str() + " does not match dim " +
                             std::to_string(d));

  // Even indices train the domain discriminator, odd indices test it.
  std::vector<const Tensor*> train, test;
  std::vector<int> train_y, test_y;
  auto split = [&](const std::vector<Tensor>& fs, int label) {
    for (size_t i = 0; i < fs.size(); ++i) {
      if (i % 2 == 0) {
        train.push_back(&fs[i]);
        train_y.push_back(label);
      } else {
        test.push_back(&fs[i]);
        test_y.push_back(label);
      }
    }
  };
  split(source_features, 0);
  split(target_features, 1);

  // Standardize with training statistics.
  std::vector<double> mean(static_cast<size_t>(d), 0.0), sd(static_cast<size_t>(d), 0.0);
  for (const Tensor* f : train)
    for (int e = 0; e < d; ++e) mean[static_cast<size_t>(e)] += (*f)[e];
  for (int e = 0; e < d; ++e) mean[static_cast<size_t>(e)] /= static_cast<double>(train.size());
  for (const Tensor* f : train)
    for (int e = 0; e < d; ++e) {
      const double diff = (*f)[e] - mean[static_cast<size_t>(e)];
      sd[static_cast<size_t>(e)] += diff * diff;
    }
  for (int e = 0; e < d; ++e) {
    sd[static_cast<size_t>(e)] = std::sqrt(sd[static_cast<size_t>(e)] / static_cast<double>(train.size()));
    if (sd[static_cast<size_t>(e)] < 1e-12) sd[static_cast<size_t>(e)] = 1.0;
  }
  auto feat = [&](const Tensor* f, int e) {
    return ((*f)[e] - mean[static_cast<size_t>(e)]) / sd[static_cast<size_t>(e)];
  };

  // L2-regularized full-batch logistic regression, fixed schedule:
  // deterministic, and the bounded margin keeps overlapping clouds from
  // registering as perfectly separable.
  std::vector<double> w(static_cast<size_t>(d), 0.0);
  double b = 0.0;
  const int iters = 200;
  const double lr = 1.0;
  const double l2 = 0.1;
  const double n_train = static_cast<double>(train.size());
  for (int it = 0; it < iters; ++it) {
    std::vector<double> gw(static_cast<size_t>(d), 0.0);
    double gb = 0.0;
    for (size_t i = 0; i < train.size(); ++i) {
      double z = b;
      for (int e = 0; e < d; ++e) z += w[static_cast<size_t>(e)] * feat(train[i], e);
      const double p = 1.0 / (1.0 + std::exp(-z));
      const double g = p - train_y[i];
      for (int e = 0; e < d; ++e) gw[static_cast<size_t>(e)] += g * feat(train[i], e);
      gb += g;
    }
    for (int e = 0; e < d; ++e)
      w[static_cast<size_t>(e)] -= lr * (gw[static_cast<size_t>(e)] / n_train + l2 * w[static_cast<size_t>(e)]);
    b -= lr * gb / n_train;
  }

  int wrong = 0;
  for (size_t i = 0; i < test.size(); ++i) {
    double z = b;
    for (int e = 0; e < d; ++e) z += w[static_cast<size_t>(e)] * feat(test[i], e);
    const int pred = z > 0.0 ? 1 : 0;
    if (pred != test_y[i]) wrong++;
  }
  const double err = static_cast<double>(wrong) / static_cast<double>(test.size());
  const double dist = 2.0 * (1.0 - 2.0 * err);
  return std::min(2.0, std::max(0.0, dist));
}

namespace {

Tensor crop(const Tensor& img, int oy, int ox, int side) {
  Tensor out({side, side, img.dim(2)});
  for (int y = 0; y < side; ++y)
    for (int x = 0; x < side; ++x)
      for (int c = 0; c < img.dim(2); ++c) out.at(y, x, c) = img.at(oy + y, ox + x, c);
  return out;
}

Tensor augment_source(const Tensor& img, int pad, Rng& rng) {
  if (pad == 0) return img;
  const int side = img.dim(0);
  const Tensor up = bilinear_resize(img, side + pad, side + pad);
  const int oy = rng.uniform_int(pad + 1);
  const int ox = rng.uniform_int(pad + 1);
  return crop(up, oy, ox, side);
}

struct EvalSnapshot {
  Evaluation target;
  double a_distance;
};

EvalSnapshot snapshot(const Model& m, const DomainDataset& data) {
  EvalSnapshot s{evaluate(m, data.target_images, data.target_hidden_labels), 0.0};
  const std::vector<Tensor> fs = embed_images(m, data.source_images);
  s.a_distance = a_distance_proxy(fs, s.target.features);
  return s;
}

EpochRow make_row(int epoch, const EvalSnapshot& s) {
  EpochRow row;
  row.epoch = epoch;
  row.target_accuracy = s.target.accuracy;
  row.per_class = s.target.per_class;
  row.a_distance = s.a_distance;
  row.attention_entropy = s.target.mean_attention_entropy;
  return row;
}

}  // namespace

TrainResult train(const TrainConfig& cfg, const DomainDataset& data, std::ostream* progress) {
  cfg.validate();
  if (data.source_images.empty() || data.target_images.empty())
    throw DataError("train: both domains must be non-empty");
  if (data.source_images.size() != data.source_labels.size())
    throw DataError("train: source image/label count mismatch");
  if (data.target_images.size() != data.target_hidden_labels.size())
    throw DataError("train: target image/hidden-label count mismatch");
  check_labels(data.source_labels, cfg.model.classes, "train");

  const int n_t = static_cast<int>(data.target_images.size());
  const int k_count = static_cast<int>(cfg.model.scales.size());
  const int native = cfg.model.native_scale_index();

  Rng init_rng(Rng::derive(cfg.seed, 1));
  TrainResult result;
  result.model = init_model(cfg.model, init_rng);
  Model& model = result.model;

  std::vector<Tensor> velocity;
  std::vector<Tensor*> params;
  for_each_param(model, [&](const std::string&, Tensor& t) {
    velocity.emplace_back(t.shape());
    params.push_back(&t);
  });

  result.history.push_back(make_row(0, snapshot(model, data)));

  std::vector<DomainPair> pairs;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    if ((epoch - 1) % cfg.pseudo_refresh == 0)
      pairs = assign_pseudo_labels(model, data.source_images, data.source_labels, data.target_images);
    const bool use_pseudo = epoch > cfg.warmup_epochs;

    Rng erng(Rng::derive(cfg.seed, 2, static_cast<std::uint64_t>(epoch)));
    std::vector<int> order(static_cast<size_t>(n_t));
    for (int i = 0; i < n_t; ++i) order[static_cast<size_t>(i)] = i;
    for (int i = n_t - 1; i > 0; --i) std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(erng.uniform_int(i + 1))]);

    LossReport epoch_loss;
    int items = 0, items_with_cls_t = 0;
    const int steps = (n_t + cfg.batch_size - 1) / cfg.batch_size;
    for (int step = 0; step < steps; ++step) {
      const int begin = step * cfg.batch_size;
      const int count = std::min(cfg.batch_size, n_t - begin);
      const int k = k_count > 1 ? erng.uniform_int(k_count) : 0;

      std::vector<Tensor> acc;
      acc.reserve(params.size());
      for (const Tensor* p : params) acc.emplace_back(p->shape());

      for (int i = 0; i < count; ++i) {
        const int t_idx = order[static_cast<size_t>(begin + i)];
        // Each target trains with its paired source sample.
        const int s_idx = pairs[static_cast<size_t>(t_idx)].source_index;
        Rng irng(Rng::derive(cfg.seed, static_cast<std::uint64_t>(epoch), static_cast<std::uint64_t>(step),
                             static_cast<std::uint64_t>(i)));
        const Tensor src_aug = augment_source(data.source_images[static_cast<size_t>(s_idx)], cfg.crop_pad, irng);
        const Tensor src_scaled = rescale(src_aug, cfg.model.scales[static_cast<size_t>(k)]);

        Tape tape;
        BoundModel bm = bind_model(tape, model);
        QuadOptions qo;
        qo.noise.enabled = cfg.noise_enabled;
        qo.noise.sigma = cfg.noise_sigma;
        qo.rng = &irng;
        qo.noise_layers = cfg.noise_layers.empty() ? nullptr : &cfg.noise_layers;
        const FeatureQuad quad = forward_quad(tape, bm.backbone, src_scaled, k,
                                              data.target_images[static_cast<size_t>(t_idx)], native, qo);

        TotalLossInputs in;
        in.quad = &quad;
        in.head = bm.head;
        in.source_target = one_hot(data.source_labels[static_cast<size_t>(s_idx)], cfg.model.classes);
        Tensor pseudo_dist;
        if (use_pseudo) {
          pseudo_dist = one_hot(pairs[static_cast<size_t>(t_idx)].pseudo_label, cfg.model.classes);
          in.pseudo_target = &pseudo_dist;
        }
        in.scale_index = k;
        in.weights = cfg.weights;
        in.distill = cfg.distill;

        LossReport rep;
        const NodeId loss = total_loss(tape, in, &rep);
        if (!std::isfinite(rep.total)) {
          const char* term = !std::isfinite(rep.cls_s)     ? "cls_s"
                             : !std::isfinite(rep.cls_s2t) ? "cls_s2t"
                             : !std::isfinite(rep.dst)     ? "dst"
                             : !std::isfinite(rep.cls_t)   ? "cls_t"
                             : !std::isfinite(rep.style)   ? "style"
                                                           : "total";
          throw NumericError("train: non-finite loss term " + std::string(term) + " at epoch " +
                             std::to_string(epoch) + " step " + std::to_string(step));
        }
        tape.backward(loss);

        const double inv = 1.0 / static_cast<double>(count);
        for (size_t li = 0; li < bm.leaves.size(); ++li) {
          const Tensor& g = tape.grad(bm.leaves[li].second);
          Tensor& a = acc[li];
          for (int e = 0; e < g.size(); ++e) a[e] += g[e] * inv;
        }
        epoch_loss.cls_s += rep.cls_s;
        epoch_loss.cls_s2t += rep.cls_s2t;
        epoch_loss.dst += rep.dst;
        epoch_loss.style += rep.style;
        epoch_loss.total += rep.total;
        if (rep.has_cls_t) {
          epoch_loss.cls_t += rep.cls_t;
          items_with_cls_t++;
        }
        items++;
      }

      for (size_t li = 0; li < params.size(); ++li) {
        Tensor& p = *params[li];
        Tensor& v = velocity[li];
        for (int e = 0; e < p.size(); ++e) {
          const double g = acc[li][e] + cfg.weight_decay * p[e];
          v[e] = cfg.momentum * v[e] + g;
          p[e] -= cfg.learning_rate * v[e];
        }
      }
    }

    EpochRow row = make_row(epoch, snapshot(model, data));
    row.has_loss = items > 0;
    if (items > 0) {
      row.mean_loss.cls_s = epoch_loss.cls_s / items;
      row.mean_loss.cls_s2t = epoch_loss.cls_s2t / items;
      row.mean_loss.dst = epoch_loss.dst / items;
      row.mean_loss.style = epoch_loss.style / items;
      row.mean_loss.total = epoch_loss.total / items;
      row.mean_loss.has_cls_t = items_with_cls_t > 0;
      row.mean_loss.cls_t = items_with_cls_t > 0 ? epoch_loss.cls_t / items_with_cls_t : 0.0;
    }
    result.history.push_back(row);
    if (progress)
      (*progress) << "epoch " << epoch << "/" << cfg.epochs << " loss " << format_g17(row.mean_loss.total)
                  << " target_acc " << format_g17(row.target_accuracy) << " a_dist "
                  << format_g17(row.a_distance) << "\n";
  }
  return result;
}

std::string format_g17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string metrics_csv(const std::vector<EpochRow>& history, int classes) {
  std::string out = "epoch,loss_cls_s,loss_cls_s2t,loss_dst,loss_cls_t,loss_style,loss_total,target_acc";
  for (int c = 0; c < classes; ++c) out += ",acc_class_" + std::to_string(c);
  out += ",a_distance,attn_entropy\n";
  const double nan = std::nan("");
  for (const EpochRow& row : history) {
    out += std::to_string(row.epoch);
    const LossReport& l = row.mean_loss;
    out += "," + format_g17(row.has_loss ? l.cls_s : nan);
    out += "," + format_g17(row.has_loss ? l.cls_s2t : nan);
    out += "," + format_g17(row.has_loss ? l.dst : nan);
    out += "," + format_g17(row.has_loss ? (l.has_cls_t ? l.cls_t : 0.0) : nan);
    out += "," + format_g17(row.has_loss ? l.style : nan);
    out += "," + format_g17(row.has_loss ? l.total : nan);
    out += "," + format_g17(row.target_accuracy);
    for (int c = 0; c < classes; ++c)
      out += "," + format_g17(c < static_cast<int>(row.per_class.size()) ? row.per_class[static_cast<size_t>(c)] : 0.0);
    out += "," + format_g17(row.a_distance);
    out += "," + format_g17(row.attention_entropy);
    out += "\n";
  }
  return out;
}

}  // namespace dacsm
