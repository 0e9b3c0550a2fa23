#pragma once

#include <deque>
#include <functional>
#include <vector>

#include "dacsm/tensor.hpp"

namespace dacsm {

using NodeId = int;

// Reverse-mode autodiff over a dynamically recorded tape. Nodes are appended
// in execution order, so ids are already a topological order; backward() runs
// a single reverse sweep and visits each node exactly once. Gradient buffers
// live on the tape, keyed by node id.
//
// All ops validate shapes eagerly and name themselves in error messages.
// Ops that need saved intermediates capture them by value in the backward
// closure; closures reference other nodes only by id, never by pointer, so
// tape growth cannot invalidate them.
class Tape {
 public:
  // Registers a differentiable input. Returns its id.
  NodeId leaf(Tensor value);

  int node_count() const { return static_cast<int>(nodes_.size()); }
  const Tensor& value(NodeId id) const;
  // Gradient of the last backward() root with respect to node id. Zero-filled
  // for nodes the sweep never reached. Invalid before backward().
  const Tensor& grad(NodeId id) const;

  // Seeds the root (which must hold exactly one element) with gradient 1 and
  // sweeps the tape in reverse id order.
  void backward(NodeId root);

  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  NodeId scale(NodeId a, double c);
  // a + c where c carries no gradient (noise injection, constant offsets).
  NodeId add_const(NodeId a, Tensor c);
  NodeId matmul(NodeId a, NodeId b);
  // a * b^T
  NodeId matmul_nt(NodeId a, NodeId b);
  // [m] * [m x n] -> [n]
  NodeId vecmat(NodeId v, NodeId m);
  // [n x d] + broadcast row [d]
  NodeId add_bias_rows(NodeId x, NodeId b);
  NodeId softmax_rows(NodeId x, double tau = 1.0);
  // Row-wise layer norm with population variance and eps inside the sqrt.
  NodeId layer_norm(NodeId x, NodeId gamma, NodeId beta, double eps = 1e-6);
  // Exact (erf-form) GELU.
  NodeId gelu(NodeId x);
  NodeId reshape(NodeId x, std::vector<int> shape);
  // [n x d] -> [d]
  NodeId take_row(NodeId x, int row);
  NodeId concat_rows(NodeId a, NodeId b);
  NodeId slice_cols(NodeId x, int offset, int len);
  NodeId concat_cols(const std::vector<NodeId>& parts);

  // Scalar <w, x> with a fixed weight tensor (no gradient into w). The
  // gradient checks use it to reduce any op output to a scalar.
  NodeId weighted_sum(NodeId x, Tensor w);

  // Softmax cross-entropy of logits [C] against a fixed target distribution
  // (one-hot or soft); computed via shifted log-sum-exp.
  NodeId cross_entropy(NodeId logits, Tensor target);

  // Distillation KL between tau-softened softmaxes of two logit vectors.
  // teacher is read at recording time and receives no gradient (stop-grad).
  // teacher_first selects KL(teacher || student) vs KL(student || teacher).
  NodeId distill_kl(NodeId student, NodeId teacher, double tau, bool teacher_first);

  // || mu_a - mu_b ||_2 + || std_a - std_b ||_2 over per-channel token
  // statistics of two token matrices (row counts may differ). Both sides
  // receive gradients.
  NodeId style_pair(NodeId a, NodeId b);

  // Sub-center scores. w: [C x K x D], f: [D].
  // subcenter_pick scores every class at the fixed sub-center k.
  // subcenter_max scores at the per-class best sub-center (ties pick the
  // lowest index); the gradient flows through the selected branch only.
  NodeId subcenter_pick(NodeId w, NodeId f, int k);
  NodeId subcenter_max(NodeId w, NodeId f, std::vector<int>* chosen = nullptr);

 private:
  using BackFn = std::function<void(Tape&, NodeId)>;

  struct Node {
    Tensor value;
    std::vector<NodeId> parents;
    BackFn backward;
    const char* op;
  };

  NodeId record(Tensor value, std::vector<NodeId> parents, BackFn bw, const char* op);
  Tensor& grad_ref(NodeId id);
  void check_id(NodeId id, const char* who) const;
  const Tensor& val2(NodeId id, const char* who) const;  // value, rank-2 checked

  // Deque so value() references stay valid while later nodes are recorded.
  std::deque<Node> nodes_;
  std::vector<Tensor> grads_;
  bool swept_ = false;
};

}  // namespace dacsm
