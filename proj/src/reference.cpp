#include "dacsm/reference.hpp"

#include <cmath>

namespace dacsm::ref {

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows())
    throw DimensionError("ref::matmul: incompatible " + a.shape_str() + " vs " + b.shape_str());
  Tensor out({a.rows(), b.cols()});
  for (int i = 0; i < a.rows(); ++i)
    for (int j = 0; j < b.cols(); ++j) {
      double acc = 0.0;
      for (int k = 0; k < a.cols(); ++k) acc += a.at(i, k) * b.at(k, j);
      out.at(i, j) = acc;
    }
  return out;
}

Tensor softmax_rows(const Tensor& x, double tau) {
  if (x.rank() != 2) throw DimensionError("ref::softmax_rows: expected rank 2, got " + x.shape_str());
  if (!(tau > 0.0)) throw ParameterError("ref::softmax_rows: temperature must be positive");
  Tensor out({x.rows(), x.cols()});
  for (int i = 0; i < x.rows(); ++i) {
    long double mx = x.at(i, 0);
    for (int j = 1; j < x.cols(); ++j) mx = std::max<long double>(mx, x.at(i, j));
    long double sum = 0.0L;
    for (int j = 0; j < x.cols(); ++j) sum += expl((static_cast<long double>(x.at(i, j)) - mx) / tau);
    for (int j = 0; j < x.cols(); ++j)
      out.at(i, j) = static_cast<double>(expl((static_cast<long double>(x.at(i, j)) - mx) / tau) / sum);
  }
  return out;
}

Tensor layer_norm_rows(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  if (x.rank() != 2 || gamma.rank() != 1 || beta.rank() != 1 || gamma.dim(0) != x.cols() || beta.dim(0) != x.cols())
    throw DimensionError("ref::layer_norm_rows: incompatible shapes");
  Tensor out({x.rows(), x.cols()});
  for (int i = 0; i < x.rows(); ++i) {
    long double mean = 0.0L;
    for (int j = 0; j < x.cols(); ++j) mean += x.at(i, j);
    mean /= x.cols();
    long double var = 0.0L;
    for (int j = 0; j < x.cols(); ++j) {
      const long double d = x.at(i, j) - mean;
      var += d * d;
    }
    var /= x.cols();
    const long double inv = 1.0L / sqrtl(var + static_cast<long double>(eps));
    for (int j = 0; j < x.cols(); ++j)
      out.at(i, j) = static_cast<double>((x.at(i, j) - mean) * inv) * gamma[j] + beta[j];
  }
  return out;
}

Tensor bilinear_resize(const Tensor& img, int out_h, int out_w) {
  if (img.rank() != 3) throw DimensionError("ref::bilinear_resize: expected [H x W x C]");
  const int h = img.dim(0), w = img.dim(1), c = img.dim(2);
  Tensor out({out_h, out_w, c});
  for (int i = 0; i < out_h; ++i)
    for (int j = 0; j < out_w; ++j) {
      const double fy = out_h > 1 ? static_cast<double>(i) * (h - 1) / (out_h - 1) : 0.0;
      const double fx = out_w > 1 ? static_cast<double>(j) * (w - 1) / (out_w - 1) : 0.0;
      int y0 = std::min(static_cast<int>(fy), h > 1 ? h - 2 : 0);
      int x0 = std::min(static_cast<int>(fx), w > 1 ? w - 2 : 0);
      const int y1 = h > 1 ? y0 + 1 : 0;
      const int x1 = w > 1 ? x0 + 1 : 0;
      const double wy = fy - y0, wx = fx - x0;
      for (int ch = 0; ch < c; ++ch) {
        const double top = img.at(y0, x0, ch) + (img.at(y0, x1, ch) - img.at(y0, x0, ch)) * wx;
        const double bot = img.at(y1, x0, ch) + (img.at(y1, x1, ch) - img.at(y1, x0, ch)) * wx;
        out.at(i, j, ch) = top + (bot - top) * wy;
      }
    }
  return out;
}

std::pair<std::vector<double>, std::vector<double>> channel_stats(const Tensor& x) {
  if (x.rank() != 2 || x.rows() < 1) throw DimensionError("ref::channel_stats: expected non-empty rank 2");
  const int n = x.rows(), d = x.cols();
  std::vector<double> mean(static_cast<size_t>(d), 0.0), sd(static_cast<size_t>(d), 0.0);
  for (int j = 0; j < d; ++j) {
    long double m = 0.0L;
    for (int i = 0; i < n; ++i) m += x.at(i, j);
    m /= n;
    long double v = 0.0L;
    for (int i = 0; i < n; ++i) {
      const long double diff = x.at(i, j) - m;
      v += diff * diff;
    }
    v /= n;
    mean[static_cast<size_t>(j)] = static_cast<double>(m);
    sd[static_cast<size_t>(j)] = static_cast<double>(sqrtl(v));
  }
  return {mean, sd};
}

double kl_divergence(const std::vector<double>& p, const std::vector<double>& q) {
  if (p.size() != q.size()) throw DimensionError("ref::kl_divergence: length mismatch");
  long double acc = 0.0L;
  for (size_t i = 0; i < p.size(); ++i) {
    if (p[i] == 0.0) continue;  // 0 * log 0 = 0
    if (q[i] <= 0.0) throw NumericError("ref::kl_divergence: q has a zero where p > 0");
    acc += static_cast<long double>(p[i]) * (logl(p[i]) - logl(q[i]));
  }
  return static_cast<double>(acc);
}

Tensor attention(const Tensor& z_q, const Tensor& z_kv, const Tensor& w_q, const Tensor& w_k,
                 const Tensor& w_v, int heads, Tensor* weights_out) {
  const int tq = z_q.rows(), tk = z_kv.rows(), d = z_q.cols();
  if (z_kv.cols() != d || w_q.rows() != d || w_q.cols() != d || !w_q.same_shape(w_k) || !w_q.same_shape(w_v))
    throw DimensionError("ref::attention: incompatible shapes");
  if (heads < 1 || d % heads != 0) throw ParameterError("ref::attention: heads must divide dim");
  const int dh = d / heads;
  Tensor q = ref::matmul(z_q, w_q), k = ref::matmul(z_kv, w_k), v = ref::matmul(z_kv, w_v);
  Tensor out({tq, d});
  Tensor weights({heads, tq, tk});
  for (int h = 0; h < heads; ++h) {
    const int off = h * dh;
    for (int i = 0; i < tq; ++i) {
      // logits, softmax, weighted value sum, all by explicit summation
      std::vector<long double> logit(static_cast<size_t>(tk), 0.0L);
      long double mx = -1e300L;
      for (int j = 0; j < tk; ++j) {
        long double s = 0.0L;
        for (int e = 0; e < dh; ++e) s += static_cast<long double>(q.at(i, off + e)) * k.at(j, off + e);
        logit[static_cast<size_t>(j)] = s / sqrtl(static_cast<long double>(dh));
        mx = std::max(mx, logit[static_cast<size_t>(j)]);
      }
      long double z = 0.0L;
      for (int j = 0; j < tk; ++j) z += expl(logit[static_cast<size_t>(j)] - mx);
      for (int j = 0; j < tk; ++j) {
        const double a = static_cast<double>(expl(logit[static_cast<size_t>(j)] - mx) / z);
        weights.at(h, i, j) = a;
        for (int e = 0; e < dh; ++e) out.at(i, off + e) += a * v.at(j, off + e);
      }
    }
  }
  if (weights_out) *weights_out = weights;
  return out;
}

std::pair<Tensor, std::vector<int>> style_swap(const Tensor& content, const Tensor& style) {
  if (content.rank() != 2 || style.rank() != 2 || content.cols() != style.cols())
    throw DimensionError("ref::style_swap: incompatible " + content.shape_str() + " vs " + style.shape_str());
  if (style.rows() < 1) throw DimensionError("ref::style_swap: style set is empty");
  const int nc = content.rows(), ns = style.rows(), d = content.cols();
  Tensor out({nc, d});
  std::vector<int> chosen(static_cast<size_t>(nc), 0);
  for (int i = 0; i < nc; ++i) {
    double cn = 0.0;
    for (int e = 0; e < d; ++e) cn += content.at(i, e) * content.at(i, e);
    cn = std::sqrt(cn);
    int best = 0;
    double best_cos = -2.0;
    for (int j = 0; j < ns; ++j) {
      double dot = 0.0, sn = 0.0;
      for (int e = 0; e < d; ++e) {
        dot += content.at(i, e) * style.at(j, e);
        sn += style.at(j, e) * style.at(j, e);
      }
      sn = std::sqrt(sn);
      const double denom = cn * sn;
      const double cos = denom > 0.0 ? dot / denom : 0.0;
      if (cos > best_cos) {
        best_cos = cos;
        best = j;
      }
    }
    chosen[static_cast<size_t>(i)] = best;
    for (int e = 0; e < d; ++e) out.at(i, e) = style.at(best, e);
  }
  return {out, chosen};
}

}  // namespace dacsm::ref
