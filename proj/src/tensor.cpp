#include "dacsm/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

namespace dacsm {

std::string shape_to_string(const std::vector<int>& shape) {
  std::string s = "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

namespace {

int checked_count(const std::vector<int>& shape) {
  long long n = 1;
  for (int d : shape) {
    if (d <= 0) throw DimensionError("Tensor: nonpositive dimension in " + shape_to_string(shape));
    n *= d;
  }
  if (n > (1LL << 30)) throw DimensionError("Tensor: " + shape_to_string(shape) + " exceeds size limit");
  return static_cast<int>(n);
}

}  // namespace

Tensor::Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
  data_.assign(static_cast<size_t>(checked_count(shape_)), 0.0);
}

Tensor::Tensor(std::vector<int> shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (checked_count(shape_) != static_cast<int>(data_.size()))
    throw DimensionError("Tensor: shape " + shape_to_string(shape_) + " does not match " +
                         std::to_string(data_.size()) + " elements");
}

Tensor Tensor::scalar(double v) { return Tensor({1}, {v}); }

Tensor Tensor::full(std::vector<int> shape, double v) {
  Tensor t(std::move(shape));
  for (int i = 0; i < t.size(); ++i) t[i] = v;
  return t;
}

int Tensor::dim(int i) const {
  if (i < 0 || i >= rank())
    throw DimensionError("Tensor::dim: axis " + std::to_string(i) + " out of range for " + shape_str());
  return shape_[static_cast<size_t>(i)];
}

void Tensor::check_rank(int r, const char* who) const {
  if (rank() != r)
    throw DimensionError(std::string(who) + ": expected rank " + std::to_string(r) + ", got " + shape_str());
}

double& Tensor::at(int i) {
  check_rank(1, "Tensor::at(i)");
  if (i < 0 || i >= shape_[0]) throw DimensionError("Tensor::at: index " + std::to_string(i) + " out of " + shape_str());
  return data_[static_cast<size_t>(i)];
}

double Tensor::at(int i) const { return const_cast<Tensor*>(this)->at(i); }

double& Tensor::at(int i, int j) {
  check_rank(2, "Tensor::at(i,j)");
  if (i < 0 || i >= shape_[0] || j < 0 || j >= shape_[1])
    throw DimensionError("Tensor::at: (" + std::to_string(i) + "," + std::to_string(j) + ") out of " + shape_str());
  return data_[static_cast<size_t>(i) * shape_[1] + j];
}

double Tensor::at(int i, int j) const { return const_cast<Tensor*>(this)->at(i, j); }

double& Tensor::at(int i, int j, int k) {
  check_rank(3, "Tensor::at(i,j,k)");
  if (i < 0 || i >= shape_[0] || j < 0 || j >= shape_[1] || k < 0 || k >= shape_[2])
    throw DimensionError("Tensor::at: (" + std::to_string(i) + "," + std::to_string(j) + "," + std::to_string(k) +
                         ") out of " + shape_str());
  return data_[(static_cast<size_t>(i) * shape_[1] + j) * shape_[2] + k];
}

double Tensor::at(int i, int j, int k) const { return const_cast<Tensor*>(this)->at(i, j, k); }

int Tensor::rows() const {
  check_rank(2, "Tensor::rows");
  return shape_[0];
}

int Tensor::cols() const {
  check_rank(2, "Tensor::cols");
  return shape_[1];
}

bool Tensor::all_finite() const {
  for (double v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

Tensor Tensor::reshaped(std::vector<int> shape) const {
  if (checked_count(shape) != size())
    throw DimensionError("Tensor::reshaped: cannot view " + shape_str() + " as " + shape_to_string(shape));
  return Tensor(std::move(shape), data_);
}

namespace {

void require_rank2(const Tensor& t, const char* op, const char* name) {
  if (t.rank() != 2)
    throw DimensionError(std::string(op) + ": " + name + " must be rank 2, got " + t.shape_str());
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul", "lhs");
  require_rank2(b, "matmul", "rhs");
  const int m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k)
    throw DimensionError("matmul: inner dimensions differ: " + a.shape_str() + " vs " + b.shape_str());
  Tensor out({m, n});
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();
#pragma omp parallel for schedule(static) if (static_cast<long long>(m) * n * k > 65536)
  for (int i = 0; i < m; ++i) {
    double* orow = po + static_cast<size_t>(i) * n;
    const double* arow = pa + static_cast<size_t>(i) * k;
    for (int l = 0; l < k; ++l) {
      const double av = arow[l];
      const double* brow = pb + static_cast<size_t>(l) * n;
      for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
  return out;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul_nt", "lhs");
  require_rank2(b, "matmul_nt", "rhs");
  const int m = a.rows(), k = a.cols(), n = b.rows();
  if (b.cols() != k)
    throw DimensionError("matmul_nt: inner dimensions differ: " + a.shape_str() + " vs " + b.shape_str() + "^T");
  Tensor out({m, n});
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();
#pragma omp parallel for schedule(static) if (static_cast<long long>(m) * n * k > 65536)
  for (int i = 0; i < m; ++i) {
    const double* arow = pa + static_cast<size_t>(i) * k;
    double* orow = po + static_cast<size_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      const double* brow = pb + static_cast<size_t>(j) * k;
      double acc = 0.0;
      for (int l = 0; l < k; ++l) acc += arow[l] * brow[l];
      orow[j] = acc;
    }
  }
  return out;
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul_tn", "lhs");
  require_rank2(b, "matmul_tn", "rhs");
  const int k = a.rows(), m = a.cols(), n = b.cols();
  if (b.rows() != k)
    throw DimensionError("matmul_tn: inner dimensions differ: " + a.shape_str() + "^T vs " + b.shape_str());
  Tensor out({m, n});
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();
#pragma omp parallel for schedule(static) if (static_cast<long long>(m) * n * k > 65536)
  for (int i = 0; i < m; ++i) {
    double* orow = po + static_cast<size_t>(i) * n;
    for (int l = 0; l < k; ++l) {
      const double av = pa[static_cast<size_t>(l) * m + i];
      const double* brow = pb + static_cast<size_t>(l) * n;
      for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
  return out;
}

Tensor matvec(const Tensor& m, const Tensor& v) {
  require_rank2(m, "matvec", "matrix");
  if (v.rank() != 1 || v.dim(0) != m.cols())
    throw DimensionError("matvec: " + m.shape_str() + " incompatible with " + v.shape_str());
  Tensor out({m.rows()});
  for (int i = 0; i < m.rows(); ++i) {
    double acc = 0.0;
    for (int j = 0; j < m.cols(); ++j) acc += m.data()[static_cast<size_t>(i) * m.cols() + j] * v[j];
    out[i] = acc;
  }
  return out;
}

Tensor vecmat(const Tensor& v, const Tensor& m) {
  require_rank2(m, "vecmat", "matrix");
  if (v.rank() != 1 || v.dim(0) != m.rows())
    throw DimensionError("vecmat: " + v.shape_str() + " incompatible with " + m.shape_str());
  Tensor out({m.cols()});
  for (int i = 0; i < m.rows(); ++i) {
    const double vi = v[i];
    for (int j = 0; j < m.cols(); ++j) out[j] += vi * m.data()[static_cast<size_t>(i) * m.cols() + j];
  }
  return out;
}

Tensor outer(const Tensor& u, const Tensor& v) {
  if (u.rank() != 1 || v.rank() != 1)
    throw DimensionError("outer: expected vectors, got " + u.shape_str() + " and " + v.shape_str());
  Tensor out({u.dim(0), v.dim(0)});
  for (int i = 0; i < u.dim(0); ++i)
    for (int j = 0; j < v.dim(0); ++j) out.data()[static_cast<size_t>(i) * v.dim(0) + j] = u[i] * v[j];
  return out;
}

Tensor transpose(const Tensor& x) {
  require_rank2(x, "transpose", "input");
  Tensor out({x.cols(), x.rows()});
  for (int i = 0; i < x.rows(); ++i)
    for (int j = 0; j < x.cols(); ++j) out.data()[static_cast<size_t>(j) * x.rows() + i] = x.data()[static_cast<size_t>(i) * x.cols() + j];
  return out;
}

Tensor softmax_rows(const Tensor& x, double tau) {
  require_rank2(x, "softmax_rows", "input");
  if (!(tau > 0.0))
    throw ParameterError("softmax_rows: temperature must be positive, got " + std::to_string(tau));
  const int r = x.rows(), c = x.cols();
  if (c == 0) throw DimensionError("softmax_rows: rows must be non-empty, got " + x.shape_str());
  Tensor out({r, c});
#pragma omp parallel for schedule(static) if (static_cast<long long>(r) * c > 4096)
  for (int i = 0; i < r; ++i) {
    const double* xr = x.data() + static_cast<size_t>(i) * c;
    double* orow = out.data() + static_cast<size_t>(i) * c;
    double mx = xr[0];
    for (int j = 1; j < c; ++j) mx = std::max(mx, xr[j]);
    double sum = 0.0;
    for (int j = 0; j < c; ++j) {
      orow[j] = std::exp((xr[j] - mx) / tau);
      sum += orow[j];
    }
    for (int j = 0; j < c; ++j) orow[j] /= sum;
  }
  return out;
}

Tensor bilinear_resize(const Tensor& img, int out_h, int out_w) {
  if (img.rank() != 3)
    throw DimensionError("bilinear_resize: expected [H x W x C], got " + img.shape_str());
  const int h = img.dim(0), w = img.dim(1), c = img.dim(2);
  if (h < 1 || w < 1) throw DimensionError("bilinear_resize: empty input " + img.shape_str());
  if (out_h < 1 || out_w < 1)
    throw ParameterError("bilinear_resize: output size must be positive, got " + std::to_string(out_h) + "x" +
                         std::to_string(out_w));
  Tensor out({out_h, out_w, c});
  const double sy = out_h > 1 ? static_cast<double>(h - 1) / (out_h - 1) : 0.0;
  const double sx = out_w > 1 ? static_cast<double>(w - 1) / (out_w - 1) : 0.0;
#pragma omp parallel for schedule(static) if (static_cast<long long>(out_h) * out_w * c > 8192)
  for (int i = 0; i < out_h; ++i) {
    const double fy = i * sy;
    int y0 = static_cast<int>(fy);
    double wy = fy - y0;
    // Exact-integer landings keep weight 0 so copies stay bit-identical.
    if (y0 >= h - 1) {
      y0 = h - 1;
      wy = 0.0;
    }
    const int y1 = std::min(y0 + 1, h - 1);
    for (int j = 0; j < out_w; ++j) {
      const double fx = j * sx;
      int x0 = static_cast<int>(fx);
      double wx = fx - x0;
      if (x0 >= w - 1) {
        x0 = w - 1;
        wx = 0.0;
      }
      const int x1 = std::min(x0 + 1, w - 1);
      for (int ch = 0; ch < c; ++ch) {
        const double v00 = img.data()[(static_cast<size_t>(y0) * w + x0) * c + ch];
        const double v01 = img.data()[(static_cast<size_t>(y0) * w + x1) * c + ch];
        const double v10 = img.data()[(static_cast<size_t>(y1) * w + x0) * c + ch];
        const double v11 = img.data()[(static_cast<size_t>(y1) * w + x1) * c + ch];
        const double top = v00 + (v01 - v00) * wx;
        const double bot = v10 + (v11 - v10) * wx;
        out.data()[(static_cast<size_t>(i) * out_w + j) * c + ch] = top + (bot - top) * wy;
      }
    }
  }
  return out;
}

double frobenius_norm(const Tensor& x) {
  double acc = 0.0;
  for (int i = 0; i < x.size(); ++i) acc += x[i] * x[i];
  return std::sqrt(acc);
}

}  // namespace dacsm
