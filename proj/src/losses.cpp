#include "dacsm/losses.hpp"

namespace dacsm {

Tensor one_hot(int label, int classes) {
  if (classes < 1) throw LabelError("one_hot: classes must be positive, got " + std::to_string(classes));
  if (label < 0 || label >= classes)
    throw LabelError("one_hot: label " + std::to_string(label) + " outside [0, " + std::to_string(classes) + ")");
  Tensor t({classes});
  t[label] = 1.0;
  return t;
}

NodeId cross_entropy(Tape& tape, NodeId logits, Tensor target) {
  return tape.cross_entropy(logits, std::move(target));
}

NodeId distillation(Tape& tape, NodeId student_logits, NodeId teacher_logits, const DistillSpec& spec) {
  return tape.distill_kl(student_logits, teacher_logits, spec.tau, spec.teacher_first);
}

NodeId style_loss(Tape& tape, const std::vector<NodeId>& src_layers, const std::vector<NodeId>& tgt_layers) {
  if (src_layers.empty() || src_layers.size() != tgt_layers.size())
    throw DimensionError("style_loss: layer lists must be non-empty and equal length, got " +
                         std::to_string(src_layers.size()) + " vs " + std::to_string(tgt_layers.size()));
  NodeId acc = tape.style_pair(src_layers[0], tgt_layers[0]);
  for (size_t l = 1; l < src_layers.size(); ++l)
    acc = tape.add(acc, tape.style_pair(src_layers[l], tgt_layers[l]));
  return tape.scale(acc, 1.0 / static_cast<double>(src_layers.size()));
}

NodeId total_loss(Tape& tape, const TotalLossInputs& in, LossReport* report) {
  if (in.quad == nullptr) throw ParameterError("total_loss: feature quad is required");
  if (in.source_target.empty()) throw LabelError("total_loss: source label distribution is required");
  const Tensor& w = tape.value(in.head);
  if (w.rank() != 3) throw DimensionError("total_loss: head must be [C x K x D], got " + w.shape_str());
  if (in.source_target.rank() != 1 || in.source_target.dim(0) != w.dim(0))
    throw LabelError("total_loss: source target " + in.source_target.shape_str() + " does not match " +
                     std::to_string(w.dim(0)) + " classes");

  const FeatureQuad& q = *in.quad;
  NodeId logits_s = source_logits(tape, in.head, q.f_s, in.scale_index);
  NodeId logits_s2t = source_logits(tape, in.head, q.f_s2t, in.scale_index);
  NodeId logits_t = target_logits(tape, in.head, q.f_t);
  NodeId logits_t2s = target_logits(tape, in.head, q.f_t2s);

  NodeId l_cls_s = cross_entropy(tape, logits_s, in.source_target);
  NodeId l_cls_s2t = cross_entropy(tape, logits_s2t, in.source_target);
  // The t->s stream reads the target in source style: it teaches.
  NodeId l_dst = distillation(tape, logits_t, logits_t2s, in.distill);
  NodeId l_style = style_loss(tape, q.taps.layers_s, q.taps.layers_t);

  NodeId total = tape.add(tape.scale(l_cls_s, in.weights.cls_s), tape.scale(l_cls_s2t, in.weights.cls_s2t));
  total = tape.add(total, tape.scale(l_dst, in.weights.dst));
  NodeId l_cls_t = -1;
  if (in.pseudo_target != nullptr) {
    if (in.pseudo_target->rank() != 1 || in.pseudo_target->dim(0) != w.dim(0))
      throw LabelError("total_loss: pseudo target " + in.pseudo_target->shape_str() + " does not match " +
                       std::to_string(w.dim(0)) + " classes");
    l_cls_t = cross_entropy(tape, logits_t, *in.pseudo_target);
    total = tape.add(total, tape.scale(l_cls_t, in.weights.cls_t));
  }
  total = tape.add(total, tape.scale(l_style, in.weights.style));

  if (report) {
    report->cls_s = tape.value(l_cls_s)[0];
    report->cls_s2t = tape.value(l_cls_s2t)[0];
    report->dst = tape.value(l_dst)[0];
    report->has_cls_t = l_cls_t >= 0;
    report->cls_t = l_cls_t >= 0 ? tape.value(l_cls_t)[0] : 0.0;
    report->style = tape.value(l_style)[0];
    report->total = tape.value(total)[0];
  }
  return total;
}

}  // namespace dacsm
