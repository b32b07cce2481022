// SPDX-License-Identifier: Apache-2.0

#include "duq/tensor.hpp"

#include <sstream>
#include <stdexcept>

namespace duq {

Index shape_size(const Shape& shape) {
  Index n = 1;
  for (Index e : shape) n *= e;
  return n;
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ")";
  return os.str();
}

Tensor::Tensor(Shape shape) : shape_(std::move(shape)) {
  for (Index e : shape_) {
    if (e < 0) throw std::invalid_argument("Tensor: negative extent in " + shape_to_string(shape_));
  }
  data_ = Eigen::ArrayXd::Zero(shape_size(shape_));
}

Tensor::Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)) {
  if (shape_size(shape_) != static_cast<Index>(values.size())) {
    throw std::invalid_argument("Tensor: " + std::to_string(values.size()) +
                                " values do not fill shape " + shape_to_string(shape_));
  }
  data_ = ConstArrayMap(values.data(), static_cast<Index>(values.size()));
}

Tensor Tensor::zeros(Shape shape) { return Tensor(std::move(shape)); }

Tensor Tensor::full(Shape shape, double value) {
  Tensor t(std::move(shape));
  t.data_.setConstant(value);
  return t;
}

Tensor Tensor::scalar(double value) { return full({1}, value); }

Tensor Tensor::row(std::vector<double> values) {
  const Index n = static_cast<Index>(values.size());
  return Tensor({1, n}, std::move(values));
}

Tensor Tensor::from_matrix(const RowMatrixXd& m) {
  Tensor t({m.rows(), m.cols()});
  t.matrix() = m;
  return t;
}

Index Tensor::extent(Index axis) const {
  if (axis < 0 || axis >= rank()) {
    throw std::invalid_argument("Tensor: axis " + std::to_string(axis) + " out of range for " +
                                shape_to_string(shape_));
  }
  return shape_[axis];
}

double& Tensor::operator()(Index i, Index j) {
  if (rank() != 2) throw std::invalid_argument("Tensor: rank-2 access on " + shape_to_string(shape_));
  return data_[i * shape_[1] + j];
}

double Tensor::operator()(Index i, Index j) const {
  return const_cast<Tensor&>(*this)(i, j);
}

double& Tensor::operator()(Index i, Index j, Index k, Index l) {
  if (rank() != 4) throw std::invalid_argument("Tensor: rank-4 access on " + shape_to_string(shape_));
  return data_[((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
}

double Tensor::operator()(Index i, Index j, Index k, Index l) const {
  return const_cast<Tensor&>(*this)(i, j, k, l);
}

MatrixMap Tensor::matrix() {
  if (rank() > 2) throw std::invalid_argument("Tensor: matrix view of " + shape_to_string(shape_));
  const Index rows = rank() == 2 ? shape_[0] : 1;
  const Index cols = rank() == 2 ? shape_[1] : size();
  return MatrixMap(data_.data(), rows, cols);
}

ConstMatrixMap Tensor::matrix() const {
  if (rank() > 2) throw std::invalid_argument("Tensor: matrix view of " + shape_to_string(shape_));
  const Index rows = rank() == 2 ? shape_[0] : 1;
  const Index cols = rank() == 2 ? shape_[1] : size();
  return ConstMatrixMap(data_.data(), rows, cols);
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_size(shape) != size()) {
    throw std::invalid_argument("Tensor: cannot reshape " + shape_to_string(shape_) + " to " +
                                shape_to_string(shape));
  }
  Tensor t = *this;
  t.shape_ = std::move(shape);
  return t;
}

}  // namespace duq
