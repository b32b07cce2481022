// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major tensor of doubles. All numeric state in the project,
// from model weights to the four-axis dataset tensors, lives in this type.

#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <string>
#include <vector>

namespace duq {

using Index = std::int64_t;
using Shape = std::vector<Index>;

using RowMatrixXd = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrixXd>;
using ConstMatrixMap = Eigen::Map<const RowMatrixXd>;
using ArrayMap = Eigen::Map<Eigen::ArrayXd>;
using ConstArrayMap = Eigen::Map<const Eigen::ArrayXd>;

Index shape_size(const Shape& shape);
std::string shape_to_string(const Shape& shape);

/// Dense rank-1..4 tensor, 64-bit floats, row-major. Rank-2 views map onto
/// Eigen matrices so matmul and friends run as plain Eigen expressions.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor scalar(double value);
  /// 1 x n row vector.
  static Tensor row(std::vector<double> values);
  static Tensor from_matrix(const RowMatrixXd& m);

  const Shape& shape() const { return shape_; }
  Index rank() const { return static_cast<Index>(shape_.size()); }
  Index size() const { return data_.size(); }
  Index extent(Index axis) const;
  bool empty() const { return data_.size() == 0; }
  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  bool is_scalar() const { return size() == 1; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  double operator[](Index i) const { return data_[i]; }
  double& operator[](Index i) { return data_[i]; }

  // Rank-checked element access.
  double& operator()(Index i, Index j);
  double operator()(Index i, Index j) const;
  double& operator()(Index i, Index j, Index k, Index l);
  double operator()(Index i, Index j, Index k, Index l) const;

  /// Flat view over all elements.
  ArrayMap array() { return ArrayMap(data_.data(), data_.size()); }
  ConstArrayMap array() const { return ConstArrayMap(data_.data(), data_.size()); }

  /// Rank-2 matrix view; rank-0/1 tensors map to a single row.
  MatrixMap matrix();
  ConstMatrixMap matrix() const;

  /// Same data, different shape (sizes must agree).
  Tensor reshaped(Shape shape) const;

  bool all_finite() const { return data_.allFinite(); }

 private:
  Shape shape_;
  Eigen::ArrayXd data_;
};

}  // namespace duq
