#include "dacsm/autodiff.hpp"

#include <cmath>
#include <string>
#include <utility>

namespace dacsm {

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

// Shifted log-softmax of logits / tau.
std::vector<double> log_softmax(const Tensor& logits, double tau) {
  const int n = logits.size();
  std::vector<double> out(static_cast<size_t>(n));
  double mx = logits[0] / tau;
  for (int i = 1; i < n; ++i) mx = std::max(mx, logits[i] / tau);
  double sum = 0.0;
  for (int i = 0; i < n; ++i) {
    out[static_cast<size_t>(i)] = logits[i] / tau - mx;
    sum += std::exp(out[static_cast<size_t>(i)]);
  }
  const double lse = std::log(sum);
  for (int i = 0; i < n; ++i) out[static_cast<size_t>(i)] -= lse;
  return out;
}

}  // namespace

NodeId Tape::record(Tensor value, std::vector<NodeId> parents, BackFn bw, const char* op) {
  for (NodeId p : parents) check_id(p, op);
  nodes_.push_back(Node{std::move(value), std::move(parents), std::move(bw), op});
  return static_cast<NodeId>(nodes_.size()) - 1;
}

void Tape::check_id(NodeId id, const char* who) const {
  if (id < 0 || id >= static_cast<NodeId>(nodes_.size()))
    throw ParameterError(std::string(who) + ": node id " + std::to_string(id) + " is not on this tape");
}

const Tensor& Tape::value(NodeId id) const {
  check_id(id, "Tape::value");
  return nodes_[static_cast<size_t>(id)].value;
}

const Tensor& Tape::val2(NodeId id, const char* who) const {
  const Tensor& v = value(id);
  if (v.rank() != 2) throw DimensionError(std::string(who) + ": expected rank 2, got " + v.shape_str());
  return v;
}

const Tensor& Tape::grad(NodeId id) const {
  check_id(id, "Tape::grad");
  if (!swept_) throw ParameterError("Tape::grad: backward() has not been run");
  return grads_[static_cast<size_t>(id)];
}

Tensor& Tape::grad_ref(NodeId id) {
  Tensor& g = grads_[static_cast<size_t>(id)];
  if (g.empty() && nodes_[static_cast<size_t>(id)].value.size() > 0) g = Tensor(nodes_[static_cast<size_t>(id)].value.shape());
  return g;
}

void Tape::backward(NodeId root) {
  check_id(root, "Tape::backward");
  if (value(root).size() != 1)
    throw ParameterError("Tape::backward: root must be scalar, got " + value(root).shape_str());
  grads_.assign(nodes_.size(), Tensor());
  grad_ref(root)[0] = 1.0;
  for (NodeId id = root; id >= 0; --id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (grads_[static_cast<size_t>(id)].empty() || !n.backward) continue;
    n.backward(*this, id);
  }
  for (size_t i = 0; i < nodes_.size(); ++i)
    if (grads_[i].empty()) grads_[i] = Tensor(nodes_[i].value.shape());
  swept_ = true;
}

NodeId Tape::leaf(Tensor value) { return record(std::move(value), {}, nullptr, "leaf"); }

NodeId Tape::add(NodeId a, NodeId b) {
  const Tensor& va = value(a);
  const Tensor& vb = value(b);
  if (!va.same_shape(vb))
    throw DimensionError("add: shape mismatch: " + va.shape_str() + " vs " + vb.shape_str());
  Tensor out = va;
  for (int i = 0; i < out.size(); ++i) out[i] += vb[i];
  return record(std::move(out), {a, b},
                [a, b](Tape& t, NodeId self) {
                  const Tensor& g = t.grads_[static_cast<size_t>(self)];
                  Tensor& ga = t.grad_ref(a);
                  Tensor& gb = t.grad_ref(b);
                  for (int i = 0; i < g.size(); ++i) {
                    ga[i] += g[i];
                    gb[i] += g[i];
                  }
                },
                "add");
}

NodeId Tape::sub(NodeId a, NodeId b) {
  const Tensor& va = value(a);
  const Tensor& vb = value(b);
  if (!va.same_shape(vb))
    throw DimensionError("sub: shape mismatch: " + va.shape_str() + " vs " + vb.shape_str());
  Tensor out = va;
  for (int i = 0; i < out.size(); ++i) out[i] -= vb[i];
  return record(std::move(out), {a, b},
                [a, b](Tape& t, NodeId self) {
                  const Tensor& g = t.grads_[static_cast<size_t>(self)];
                  Tensor& ga = t.grad_ref(a);
                  Tensor& gb = t.grad_ref(b);
                  for (int i = 0; i < g.size(); ++i) {
                    ga[i] += g[i];
                    gb[i] -= g[i];
                  }
                },
                "sub");
}

NodeId Tape::scale(NodeId a, double c) {
  Tensor out = value(a);
  for (int i = 0; i < out.size(); ++i) out[i] *= c;
  return record(std::move(out), {a},
                [a, c](Tape& t, NodeId self) {
                  const Tensor& g = t.grads_[static_cast<size_t>(self)];
                  Tensor& ga = t.grad_ref(a);
                  for (int i = 0; i < g.size(); ++i) ga[i] += c * g[i];
                },
                "scale");
}

NodeId Tape::add_const(NodeId a, Tensor c) {
  const Tensor& va = value(a);
  if (!va.same_shape(c))
    throw DimensionError("add_const: shape mismatch: " + va.shape_str() + " vs " + c.shape_str());
  Tensor out = va;
  for (int i = 0; i < out.size(); ++i) out[i] += c[i];
  return record(std::move(out), {a},
                [a](Tape& t, NodeId self) {
                  const Tensor& g = t.grads_[static_cast<size_t>(self)];
                  Tensor& ga = t.grad_ref(a);
                  for (int i = 0; i < g.size(); ++i) ga[i] += g[i];
                },
                "add_const");
}

NodeId Tape::matmul(NodeId a, NodeId b) {
  Tensor out = dacsm::matmul(val2(a, "Tape::matmul"), val2(b, "Tape::matmul"));
  return record(std::move(out), {a, b},
                [a, b](Tape& t, NodeId self) {
                  const Tensor& g = t.grads_[static_cast<size_t>(self)];
                  const Tensor ga = dacsm::matmul_nt(g, t.value(b));
                  const Tensor gb = dacsm::matmul_tn(t.value(a), g);
                  Tensor& ra = t.grad_ref(a);
                  Tensor& rb = t.grad_ref(b);
                  for (int i = 0; i < ga.size(); ++i) ra[i] += ga[i];
                  for (int i = 0; i < gb.size(); ++i) rb[i] += gb[i];
                },
                "matmul");
}

NodeId Tape::matmul_nt(NodeId a, NodeId b) {
  Tensor out = dacsm::matmul_nt(val2(a, "Tape::matmul_nt"), val2(b, "Tape::matmul_nt"));
  return record(std::move(out), {a, b},
                [a, b](Tape& t, NodeId self) {
                  const Tensor& g = t.grads_[static_cast<size_t>(self)];
                  const Tensor ga = dacsm::matmul(g, t.value(b));
                  const Tensor gb = dacsm::matmul_tn(g, t.value(a));
                  Tensor& ra = t.grad_ref(a);
                  Tensor& rb = t.grad_ref(b);
                  for (int i = 0; i < ga.size(); ++i) ra[i] += ga[i];
                  for (int i = 0; i < gb.size(); ++i) rb[i] += gb[i];
                },
                "matmul_nt");
}

NodeId Tape::vecmat(NodeId v, NodeId m) {
  Tensor out = dacsm::vecmat(value(v), val2(m, "Tape::vecmat"));
  return record(std::move(out), {v, m},
                [v, m](Tape& t, NodeId self) {
                  const Tensor& g = t.grads_[static_cast<size_t>(self)];
                  const Tensor gv = dacsm::matvec(t.value(m), g);
                  const Tensor gm = dacsm::outer(t.value(v), g);
                  Tensor& rv = t.grad_ref(v);
                  Tensor& rm = t.grad_ref(m);
                  for (int i = 0; i < gv.size(); ++i) rv[i] += gv[i];
                  for (int i = 0; i < gm.size(); ++i) rm[i] += gm[i];
                },
                "vecmat");
}

NodeId Tape::add_bias_rows(NodeId x, NodeId b) {
  const Tensor& vx = val2(x, "Tape::add_bias_rows");
  const Tensor& vb = value(b);
  if (vb.rank() != 1 || vb.dim(0) != vx.cols())
    throw DimensionError("add_bias_rows: bias " + vb.shape_str() + " incompatible with " + vx.shape_str());
  Tensor out = vx;
  const int n = vx.rows(), d = vx.cols();
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) out[i * d + j] += vb[j];
  return record(std::move(out), {x, b},
                [x, b, n, d](Tape& t, NodeId self) {
                  const Tensor& g = t.grads_[static_cast<size_t>(self)];
                  Tensor& gx = t.grad_ref(x);
                  Tensor& gb = t.grad_ref(b);
                  for (int i = 0; i < n; ++i)
                    for (int j = 0; j < d; ++j) {
                      gx[i * d + j] += g[i * d + j];
                      gb[j] += g[i * d + j];
                    }
                },
                "add_bias_rows");
}

NodeId Tape::softmax_rows(NodeId x, double tau) {
  Tensor out = dacsm::softmax_rows(val2(x, "Tape::softmax_rows"), tau);
  const int n = out.rows(), d = out.cols();
  return record(std::move(out), {x},
                [x, tau, n, d](Tape& t, NodeId self) {
                  const Tensor& g = t.grads_[static_cast<size_t>(self)];
                  const Tensor& a = t.value(self);
                  Tensor& gx = t.grad_ref(x);
                  for (int i = 0; i < n; ++i) {
                    double dot = 0.0;
                    for (int j = 0; j < d; ++j) dot += g[i * d + j] * a[i * d + j];
                    for (int j = 0; j < d; ++j) gx[i * d + j] += a[i * d + j] * (g[i * d + j] - dot) / tau;
                  }
                },
                "softmax_rows");
}

NodeId Tape::layer_norm(NodeId x, NodeId gamma, NodeId beta, double eps) {
  const Tensor& vx = val2(x, "Tape::layer_norm");
  const Tensor& vg = value(gamma);
  const Tensor& vb = value(beta);
  const int n = vx.rows(), d = vx.cols();
  if (vg.rank() != 1 || vg.dim(0) != d || vb.rank() != 1 || vb.dim(0) != d)
    throw DimensionError("layer_norm: gamma " + vg.shape_str() + " / beta " + vb.shape_str() +
                         " incompatible with " + vx.shape_str());
  if (!(eps > 0.0)) throw ParameterError("layer_norm: eps must be positive");
  Tensor xhat({n, d});
  std::vector<double> inv(static_cast<size_t>(n));
  Tensor out({n, d});
  for (int i = 0; i < n; ++i) {
    double mean = 0.0;
    for (int j = 0; j < d; ++j) mean += vx[i * d + j];
    mean /= d;
    double var = 0.0;
    for (int j = 0; j < d; ++j) {
      const double diff = vx[i * d + j] - mean;
      var += diff * diff;
    }
    var /= d;
    const double iv = 1.0 / std::sqrt(var + eps);
    inv[static_cast<size_t>(i)] = iv;
    for (int j = 0; j < d; ++j) {
      xhat[i * d + j] = (vx[i * d + j] - mean) * iv;
      out[i * d + j] = xhat[i * d + j] * vg[j] + vb[j];
    }
  }
  return record(std::move(out), {x, gamma, beta},
                [x, gamma, beta, n, d, xhat = std::move(xhat), inv = std::move(inv)](Tape& t, NodeId self) {
                  const Tensor& g = t.grads_[static_cast<size_t>(self)];
                  const Tensor& vg = t.value(gamma);
                  Tensor& gx = t.grad_ref(x);
                  Tensor& gg = t.grad_ref(gamma);
                  Tensor& gb = t.grad_ref(beta);
                  for (int i = 0; i < n; ++i) {
                    double m1 = 0.0, m2 = 0.0;
                    for (int j = 0; j < d; ++j) {
                      const double h = g[i * d + j] * vg[j];
                      m1 += h;
                      m2 += h * xhat[i * d + j];
                      gg[j] += g[i * d + j] * xhat[i * d + j];
                      gb[j] += g[i * d + j];
                    }
                    m1 /= d;
                    m2 /= d;
                    for (int j = 0; j < d; ++j) {
                      const double h = g[i * d + j] * vg[j];
                      gx[i * d + j] += inv[static_cast<size_t>(i)] * (h - m1 - xhat[i * d + j] * m2);
                    }
                  }
                },
                "layer_norm");
}

NodeId Tape::gelu(NodeId x) {
  const Tensor& vx = value(x);
  Tensor out = vx;
  for (int i = 0; i < out.size(); ++i) out[i] = 0.5 * vx[i] * (1.0 + std::erf(vx[i] * kInvSqrt2));
  return record(std::move(out), {x},
                [x](Tape& t, NodeId self) {
                  const Tensor& g = t.grads_[static_cast<size_t>(self)];
                  const Tensor& vx = t.value(x);
                  Tensor& gx = t.grad_ref(x);
                  for (int i = 0; i < g.size(); ++i) {
                    const double cdf = 0.5 * (1.0 + std::erf(vx[i] * kInvSqrt2));
                    const double pdf = kInvSqrt2Pi * std::exp(-0.5 * vx[i] * vx[i]);
                    gx[i] += g[i] * (cdf + vx[i] * pdf);
                  }
                },
                "gelu");
}

NodeId Tape::reshape(NodeId x, std::vector<int> shape) {
  Tensor out = value(x).reshaped(shape);
  return record(std::move(out), {x},
                [x](Tape& t, NodeId self) {
                  const Tensor& g = t.grads_[static_cast<size_t>(self)];
                  Tensor& gx = t.grad_ref(x);
                  for (int i = 0; i < g.size(); ++i) gx[i] += g[i];
                },
                "reshape");
}

NodeId Tape::take_row(NodeId x, int row) {
  const Tensor& vx = val2(x, "Tape::take_row");
  const int n = vx.rows(), d = vx.cols();
  if (row < 0 || row >= n)
    throw DimensionError("take_row: row " + std::to_string(row) + " out of " + vx.shape_str());
  Tensor out({d});
  for (int j = 0; j < d; ++j) out[j] = vx[row * d + j];
  return record(std::move(out), {x},
                [x, row, d](Tape& t, NodeId self) {
                  const Tensor& g = t.grads_[static_cast<size_t>(self)];
                  Tensor& gx = t.grad_ref(x);
                  for (int j = 0; j < d; ++j) gx[row * d + j] += g[j];
                },
                "take_row");
}

NodeId Tape::concat_rows(NodeId a, NodeId b) {
  const Tensor& va = val2(a, "Tape::concat_rows");
  const Tensor& vb = val2(b, "Tape::concat_rows");
  if (va.cols() != vb.cols())
    throw DimensionError("concat_rows: column mismatch: " + va.shape_str() + " vs " + vb.shape_str());
  const int na = va.rows(), nb = vb.rows(), d = va.cols();
  Tensor out({na + nb, d});
  for (int i = 0; i < va.size(); ++i) out[i] = va[i];
  for (int i = 0; i < vb.size(); ++i) out[na * d + i] = vb[i];
  return record(std::move(out), {a, b},
                [a, b, na, nb, d](Tape& t, NodeId self) {
                  const Tensor& g = t.grads_[static_cast<size_t>(self)];
                  Tensor& ga = t.grad_ref(a);
                  Tensor& gb = t.grad_ref(b);
                  for (int i = 0; i < na * d; ++i) ga[i] += g[i];
                  for (int i = 0; i < nb * d; ++i) gb[i] += g[na * d + i];
                },
                "concat_rows");
}

NodeId Tape::slice_cols(NodeId x, int offset, int len) {
  const Tensor& vx = val2(x, "Tape::slice_cols");
  const int n = vx.rows(), d = vx.cols();
  if (offset < 0 || len < 1 || offset + len > d)
    throw DimensionError("slice_cols: [" + std::to_string(offset) + ", " + std::to_string(offset + len) +
                         ") out of " + vx.shape_str());
  Tensor out({n, len});
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < len; ++j) out[i * len + j] = vx[i * d + offset + j];
  return record(std::move(out), {x},
                [x, offset, len, n, d](Tape& t, NodeId self) {
                  const Tensor& g = t.grads_[static_cast<size_t>(self)];
                  Tensor& gx = t.grad_ref(x);
                  for (int i = 0; i < n; ++i)
                    for (int j = 0; j < len; ++j) gx[i * d + offset + j] += g[i * len + j];
                },
                "slice_cols");
}

NodeId Tape::concat_cols(const std::vector<NodeId>& parts) {
  if (parts.empty()) throw ParameterError("concat_cols: no parts");
  int n = -1, total = 0;
  for (NodeId p : parts) {
    const Tensor& v = val2(p, "Tape::concat_cols");
    if (n < 0) n = v.rows();
    if (v.rows() != n) throw DimensionError("concat_cols: row mismatch at " + v.shape_str());
    total += v.cols();
  }
  Tensor out({n, total});
  std::vector<int> offs;
  int off = 0;
  for (NodeId p : parts) {
    const Tensor& v = value(p);
    offs.push_back(off);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < v.cols(); ++j) out[i * total + off + j] = v[i * v.cols() + j];
    off += v.cols();
  }
  return record(std::move(out), parts,
                [parts, offs, n, total](Tape& t, NodeId self) {
                  const Tensor& g = t.grads_[static_cast<size_t>(self)];
                  for (size_t k = 0; k < parts.size(); ++k) {
                    Tensor& gp = t.grad_ref(parts[k]);
                    const int w = t.value(parts[k]).cols();
                    for (int i = 0; i < n; ++i)
                      for (int j = 0; j < w; ++j) gp[i * w + j] += g[i * total + offs[k] + j];
                  }
                },
                "concat_cols");
}

NodeId Tape::weighted_sum(NodeId x, Tensor w) {
  const Tensor& vx = value(x);
  if (!vx.same_shape(w))
    throw DimensionError("weighted_sum: shape mismatch: " + vx.shape_str() + " vs " + w.shape_str());
  double acc = 0.0;
  for (int i = 0; i < vx.size(); ++i) acc += vx[i] * w[i];
  return record(Tensor::scalar(acc), {x},
                [x, w = std::move(w)](Tape& t, NodeId self) {
                  const double g = t.grads_[static_cast<size_t>(self)][0];
                  Tensor& gx = t.grad_ref(x);
                  for (int i = 0; i < gx.size(); ++i) gx[i] += g * w[i];
                },
                "weighted_sum");
}

NodeId Tape::cross_entropy(NodeId logits, Tensor target) {
  const Tensor& vl = value(logits);
  if (vl.rank() != 1) throw DimensionError("cross_entropy: logits must be rank 1, got " + vl.shape_str());
  if (target.rank() != 1 || target.dim(0) != vl.dim(0))
    throw LabelError("cross_entropy: target " + target.shape_str() + " does not match logits " + vl.shape_str());
  double tsum = 0.0;
  for (int i = 0; i < target.size(); ++i) {
    if (target[i] < 0.0) throw LabelError("cross_entropy: negative target weight at index " + std::to_string(i));
    tsum += target[i];
  }
  if (std::abs(tsum - 1.0) > 1e-6)
    throw LabelError("cross_entropy: target weights sum to " + std::to_string(tsum) + ", expected 1");
  const int c = vl.size();
  double mx = vl[0];
  for (int i = 1; i < c; ++i) mx = std::max(mx, vl[i]);
  double sum = 0.0;
  for (int i = 0; i < c; ++i) sum += std::exp(vl[i] - mx);
  const double lse = mx + std::log(sum);
  double loss = lse;
  for (int i = 0; i < c; ++i) loss -= target[i] * vl[i];
  return record(Tensor::scalar(loss), {logits},
                [logits, target = std::move(target), c](Tape& t, NodeId self) {
                  const double g = t.grads_[static_cast<size_t>(self)][0];
                  const Tensor& vl = t.value(logits);
                  Tensor& gl = t.grad_ref(logits);
                  double mx = vl[0];
                  for (int i = 1; i < c; ++i) mx = std::max(mx, vl[i]);
                  double sum = 0.0;
                  for (int i = 0; i < c; ++i) sum += std::exp(vl[i] - mx);
                  for (int i = 0; i < c; ++i) gl[i] += g * (std::exp(vl[i] - mx) / sum - target[i]);
                },
                "cross_entropy");
}

NodeId Tape::distill_kl(NodeId student, NodeId teacher, double tau, bool teacher_first) {
  const Tensor& vs = value(student);
  const Tensor& vt = value(teacher);
  if (vs.rank() != 1 || vt.rank() != 1 || vs.dim(0) != vt.dim(0))
    throw DimensionError("distill_kl: logits mismatch: " + vs.shape_str() + " vs " + vt.shape_str());
  if (!(tau > 0.0)) throw ParameterError("distill_kl: temperature must be positive, got " + std::to_string(tau));
  const int c = vs.size();
  const std::vector<double> lp_t = log_softmax(vt, tau);
  const std::vector<double> lp_s = log_softmax(vs, tau);
  double val = 0.0;
  if (teacher_first) {
    for (int i = 0; i < c; ++i) val += std::exp(lp_t[static_cast<size_t>(i)]) * (lp_t[static_cast<size_t>(i)] - lp_s[static_cast<size_t>(i)]);
  } else {
    for (int i = 0; i < c; ++i) val += std::exp(lp_s[static_cast<size_t>(i)]) * (lp_s[static_cast<size_t>(i)] - lp_t[static_cast<size_t>(i)]);
  }
  // The teacher is saved by value and is not a parent: stop-gradient.
  return record(Tensor::scalar(val), {student},
                [student, lp_t, tau, teacher_first, val, c](Tape& t, NodeId self) {
                  const double g = t.grads_[static_cast<size_t>(self)][0];
                  const std::vector<double> lp_s = log_softmax(t.value(student), tau);
                  Tensor& gs = t.grad_ref(student);
                  if (teacher_first) {
                    for (int i = 0; i < c; ++i)
                      gs[i] += g * (std::exp(lp_s[static_cast<size_t>(i)]) - std::exp(lp_t[static_cast<size_t>(i)])) / tau;
                  } else {
                    for (int i = 0; i < c; ++i)
                      gs[i] += g * std::exp(lp_s[static_cast<size_t>(i)]) *
                               (lp_s[static_cast<size_t>(i)] - lp_t[static_cast<size_t>(i)] - val) / tau;
                  }
                },
                "distill_kl");
}

NodeId Tape::style_pair(NodeId a, NodeId b) {
  const Tensor& va = val2(a, "Tape::style_pair");
  const Tensor& vb = val2(b, "Tape::style_pair");
  if (va.cols() != vb.cols())
    throw DimensionError("style_pair: channel mismatch: " + va.shape_str() + " vs " + vb.shape_str());
  if (va.rows() < 1 || vb.rows() < 1)
    throw DimensionError("style_pair: empty token matrix: " + va.shape_str() + " vs " + vb.shape_str());
  const int d = va.cols(), na = va.rows(), nb = vb.rows();
  auto stat = [d](const Tensor& x, std::vector<double>& mean, std::vector<double>& sd) {
    mean.assign(static_cast<size_t>(d), 0.0);
    sd.assign(static_cast<size_t>(d), 0.0);
    const int n = x.rows();
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < d; ++j) mean[static_cast<size_t>(j)] += x[i * d + j];
    for (int j = 0; j < d; ++j) mean[static_cast<size_t>(j)] /= n;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < d; ++j) {
        const double diff = x[i * d + j] - mean[static_cast<size_t>(j)];
        sd[static_cast<size_t>(j)] += diff * diff;
      }
    for (int j = 0; j < d; ++j) sd[static_cast<size_t>(j)] = std::sqrt(sd[static_cast<size_t>(j)] / n);
  };
  std::vector<double> mu_a, sd_a, mu_b, sd_b;
  stat(va, mu_a, sd_a);
  stat(vb, mu_b, sd_b);
  double dmu2 = 0.0, dsd2 = 0.0;
  for (int j = 0; j < d; ++j) {
    dmu2 += (mu_a[static_cast<size_t>(j)] - mu_b[static_cast<size_t>(j)]) * (mu_a[static_cast<size_t>(j)] - mu_b[static_cast<size_t>(j)]);
    dsd2 += (sd_a[static_cast<size_t>(j)] - sd_b[static_cast<size_t>(j)]) * (sd_a[static_cast<size_t>(j)] - sd_b[static_cast<size_t>(j)]);
  }
  const double dmu = std::sqrt(dmu2), dsd = std::sqrt(dsd2);
  return record(Tensor::scalar(dmu + dsd), {a, b},
                [a, b, d, na, nb, mu_a, sd_a, mu_b, sd_b, dmu, dsd](Tape& t, NodeId self) {
                  const double g = t.grads_[static_cast<size_t>(self)][0];
                  const Tensor& va = t.value(a);
                  const Tensor& vb = t.value(b);
                  Tensor& ga = t.grad_ref(a);
                  Tensor& gb = t.grad_ref(b);
                  for (int j = 0; j < d; ++j) {
                    // d(dmu)/d(mu_a_j); zero-distance subgradient is 0.
                    const double cmu = dmu > 0.0 ? (mu_a[static_cast<size_t>(j)] - mu_b[static_cast<size_t>(j)]) / dmu : 0.0;
                    const double csd_a = (dsd > 0.0 && sd_a[static_cast<size_t>(j)] > 0.0)
                                             ? (sd_a[static_cast<size_t>(j)] - sd_b[static_cast<size_t>(j)]) / dsd
                                             : 0.0;
                    const double csd_b = (dsd > 0.0 && sd_b[static_cast<size_t>(j)] > 0.0)
                                             ? (sd_a[static_cast<size_t>(j)] - sd_b[static_cast<size_t>(j)]) / dsd
                                             : 0.0;
                    for (int i = 0; i < na; ++i) {
                      double dv = cmu / na;
                      if (csd_a != 0.0)
                        dv += csd_a * (va[i * d + j] - mu_a[static_cast<size_t>(j)]) / (na * sd_a[static_cast<size_t>(j)]);
                      ga[i * d + j] += g * dv;
                    }
                    for (int i = 0; i < nb; ++i) {
                      double dv = -cmu / nb;
                      if (csd_b != 0.0)
                        dv -= csd_b * (vb[i * d + j] - mu_b[static_cast<size_t>(j)]) / (nb * sd_b[static_cast<size_t>(j)]);
                      gb[i * d + j] += g * dv;
                    }
                  }
                },
                "style_pair");
}

namespace {

void check_subcenter(const Tensor& w, const Tensor& f, const char* who) {
  if (w.rank() != 3) throw DimensionError(std::string(who) + ": weights must be [C x K x D], got " + w.shape_str());
  if (f.rank() != 1 || f.dim(0) != w.dim(2))
    throw DimensionError(std::string(who) + ": feature " + f.shape_str() + " does not match weights " + w.shape_str());
}

}  // namespace

NodeId Tape::subcenter_pick(NodeId w, NodeId f, int k) {
  const Tensor& vw = value(w);
  const Tensor& vf = value(f);
  check_subcenter(vw, vf, "subcenter_pick");
  const int c = vw.dim(0), kk = vw.dim(1), d = vw.dim(2);
  if (k < 0 || k >= kk)
    throw ParameterError("subcenter_pick: sub-center " + std::to_string(k) + " out of K=" + std::to_string(kk));
  Tensor out({c});
  for (int ci = 0; ci < c; ++ci) {
    double acc = 0.0;
    for (int e = 0; e < d; ++e) acc += vw[(ci * kk + k) * d + e] * vf[e];
    out[ci] = acc;
  }
  return record(std::move(out), {w, f},
                [w, f, k, c, kk, d](Tape& t, NodeId self) {
                  const Tensor& g = t.grads_[static_cast<size_t>(self)];
                  const Tensor& vw = t.value(w);
                  const Tensor& vf = t.value(f);
                  Tensor& gw = t.grad_ref(w);
                  Tensor& gf = t.grad_ref(f);
                  for (int ci = 0; ci < c; ++ci)
                    for (int e = 0; e < d; ++e) {
                      gw[(ci * kk + k) * d + e] += g[ci] * vf[e];
                      gf[e] += g[ci] * vw[(ci * kk + k) * d + e];
                    }
                },
                "subcenter_pick");
}

NodeId Tape::subcenter_max(NodeId w, NodeId f, std::vector<int>* chosen) {
  const Tensor& vw = value(w);
  const Tensor& vf = value(f);
  check_subcenter(vw, vf, "subcenter_max");
  const int c = vw.dim(0), kk = vw.dim(1), d = vw.dim(2);
  Tensor out({c});
  std::vector<int> sel(static_cast<size_t>(c), 0);
  for (int ci = 0; ci < c; ++ci) {
    double best = -1e300;
    int best_k = 0;
    for (int k = 0; k < kk; ++k) {
      double acc = 0.0;
      for (int e = 0; e < d; ++e) acc += vw[(ci * kk + k) * d + e] * vf[e];
      if (acc > best) {  // strict: ties keep the lowest index
        best = acc;
        best_k = k;
      }
    }
    out[ci] = best;
    sel[static_cast<size_t>(ci)] = best_k;
  }
  if (chosen) *chosen = sel;
  return record(std::move(out), {w, f},
                [w, f, sel = std::move(sel), c, kk, d](Tape& t, NodeId self) {
                  const Tensor& g = t.grads_[static_cast<size_t>(self)];
                  const Tensor& vw = t.value(w);
                  const Tensor& vf = t.value(f);
                  Tensor& gw = t.grad_ref(w);
                  Tensor& gf = t.grad_ref(f);
                  for (int ci = 0; ci < c; ++ci) {
                    const int k = sel[static_cast<size_t>(ci)];
                    for (int e = 0; e < d; ++e) {
                      gw[(ci * kk + k) * d + e] += g[ci] * vf[e];
                      gf[e] += g[ci] * vw[(ci * kk + k) * d + e];
                    }
                  }
                },
                "subcenter_max");
}

}  // namespace dacsm
