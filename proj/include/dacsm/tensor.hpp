#pragma once

#include <string>
#include <vector>

#include "dacsm/errors.hpp"

namespace dacsm {

std::string shape_to_string(const std::vector<int>& shape);

// Dense row-major tensor of 64-bit floats. Rank is dynamic; ranks 0..3 are
// what the library actually uses (scalars, vectors, matrices, stacks).
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape);
  Tensor(std::vector<int> shape, std::vector<double> data);

  static Tensor scalar(double v);
  static Tensor full(std::vector<int> shape, double v);

  const std::vector<int>& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const;
  int size() const { return static_cast<int>(data_.size()); }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  double& operator[](int i) { return data_[i]; }
  double operator[](int i) const { return data_[i]; }

  double& at(int i);
  double at(int i) const;
  double& at(int i, int j);
  double at(int i, int j) const;
  double& at(int i, int j, int k);
  double at(int i, int j, int k) const;

  // Rank-2 conveniences; throw on other ranks.
  int rows() const;
  int cols() const;

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }
  bool all_finite() const;
  std::string shape_str() const { return shape_to_string(shape_); }

  // Same data, new shape; element count must match.
  Tensor reshaped(std::vector<int> shape) const;

 private:
  void check_rank(int r, const char* who) const;

  std::vector<int> shape_;
  std::vector<double> data_;
};

// Dense kernels. Parallel loops run over independent output rows/elements
// only, with serial inner reductions, so results are bitwise identical to the
// serial reference implementations regardless of thread count.

// [m x k] * [k x n] -> [m x n]
Tensor matmul(const Tensor& a, const Tensor& b);
// [m x k] * [n x k]^T -> [m x n]
Tensor matmul_nt(const Tensor& a, const Tensor& b);
// [k x m]^T * [k x n] -> [m x n]
Tensor matmul_tn(const Tensor& a, const Tensor& b);
// [m x n] * [n] -> [m]
Tensor matvec(const Tensor& m, const Tensor& v);
// [m] * [m x n] -> [n]
Tensor vecmat(const Tensor& v, const Tensor& m);
// [m], [n] -> [m x n]
Tensor outer(const Tensor& u, const Tensor& v);
Tensor transpose(const Tensor& x);

// Row-wise softmax of a rank-2 tensor at temperature tau > 0. Rows are
// shifted by their max before exponentiation; each output row sums to 1.
Tensor softmax_rows(const Tensor& x, double tau = 1.0);

// Corner-aligned bilinear resize of an [H x W x C] tensor.
Tensor bilinear_resize(const Tensor& img, int out_h, int out_w);

double frobenius_norm(const Tensor& x);

}  // namespace dacsm
