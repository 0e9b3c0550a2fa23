#include "dacsm/linalg.hpp"

#include <algorithm>
#include <cmath>

namespace dacsm {

ChannelStats channel_stats(const Tensor& x) {
  if (x.rank() != 2) throw DimensionError("channel_stats: expected rank 2, got " + x.shape_str());
  const int n = x.rows(), d = x.cols();
  if (n < 2) throw DataError("channel_stats: need at least two samples, got " + x.shape_str());
  ChannelStats s;
  s.mean.assign(static_cast<size_t>(d), 0.0);
  s.std.assign(static_cast<size_t>(d), 0.0);
  // Two-pass: mean first, then centered second moment.
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) s.mean[static_cast<size_t>(j)] += x.data()[static_cast<size_t>(i) * d + j];
  for (int j = 0; j < d; ++j) s.mean[static_cast<size_t>(j)] /= n;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) {
      const double diff = x.data()[static_cast<size_t>(i) * d + j] - s.mean[static_cast<size_t>(j)];
      s.std[static_cast<size_t>(j)] += diff * diff;
    }
  for (int j = 0; j < d; ++j) s.std[static_cast<size_t>(j)] = std::sqrt(s.std[static_cast<size_t>(j)] / n);
  return s;
}

double kl_divergence(const std::vector<double>& p, const std::vector<double>& q) {
  if (p.size() != q.size())
    throw DimensionError("kl_divergence: length mismatch: " + std::to_string(p.size()) + " vs " +
                         std::to_string(q.size()));
  if (p.empty()) throw DimensionError("kl_divergence: empty distributions");
  double sp = 0.0, sq = 0.0;
  for (size_t i = 0; i < p.size(); ++i) {
    if (p[i] < 0.0 || q[i] < 0.0) throw NumericError("kl_divergence: negative probability at index " + std::to_string(i));
    sp += p[i];
    sq += q[i];
  }
  if (std::abs(sp - 1.0) > 1e-6 || std::abs(sq - 1.0) > 1e-6)
    throw NumericError("kl_divergence: inputs must sum to 1 (got " + std::to_string(sp) + ", " + std::to_string(sq) + ")");
  double acc = 0.0;
  for (size_t i = 0; i < p.size(); ++i) {
    if (p[i] == 0.0) continue;
    if (q[i] <= 0.0) throw NumericError("kl_divergence: q is zero at index " + std::to_string(i) + " where p > 0");
    acc += p[i] * (std::log(p[i]) - std::log(q[i]));
  }
  return acc;
}

std::vector<double> symmetric_eigenvalues(Tensor a) {
  if (a.rank() != 2 || a.rows() != a.cols())
    throw DimensionError("symmetric_eigenvalues: expected square matrix, got " + a.shape_str());
  const int n = a.rows();
  if (n == 0) throw DimensionError("symmetric_eigenvalues: empty matrix");
  double scale = 0.0;
  for (int i = 0; i < a.size(); ++i) scale = std::max(scale, std::abs(a[i]));
  if (scale == 0.0) return std::vector<double>(static_cast<size_t>(n), 0.0);

  const int max_sweeps = 100;
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    double off = 0.0;
    for (int p = 0; p < n; ++p)
      for (int q = p + 1; q < n; ++q) off += a.at(p, q) * a.at(p, q);
    if (std::sqrt(off) <= 1e-15 * scale * n) break;
    for (int p = 0; p < n; ++p)
      for (int q = p + 1; q < n; ++q) {
        const double apq = a.at(p, q);
        if (std::abs(apq) <= 1e-300) continue;
        const double theta = (a.at(q, q) - a.at(p, p)) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(1.0 + theta * theta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = t * c;
        for (int k = 0; k < n; ++k) {
          const double akp = a.at(k, p), akq = a.at(k, q);
          a.at(k, p) = c * akp - s * akq;
          a.at(k, q) = s * akp + c * akq;
        }
        for (int k = 0; k < n; ++k) {
          const double apk = a.at(p, k), aqk = a.at(q, k);
          a.at(p, k) = c * apk - s * aqk;
          a.at(q, k) = s * apk + c * aqk;
        }
      }
  }
  std::vector<double> ev(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) ev[static_cast<size_t>(i)] = a.at(i, i);
  std::sort(ev.begin(), ev.end());
  return ev;
}

double min_singular_value(const Tensor& m) {
  if (m.rank() != 2) throw DimensionError("min_singular_value: expected rank 2, got " + m.shape_str());
  if (m.rows() == 0 || m.cols() == 0) throw DimensionError("min_singular_value: empty matrix " + m.shape_str());
  // Gram matrix on the smaller side; sigma = sqrt of its smallest eigenvalue.
  const Tensor g = m.rows() <= m.cols() ? matmul_nt(m, m) : matmul_tn(m, m);
  const std::vector<double> ev = symmetric_eigenvalues(g);
  return std::sqrt(std::max(ev.front(), 0.0));
}

}  // namespace dacsm
