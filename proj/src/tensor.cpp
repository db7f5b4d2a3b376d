#include "tfuse/tensor.hpp"

#include <sstream>
#include <stdexcept>

namespace tfuse {

Index shape_size(const Shape& shape) {
  Index n = 1;
  for (Index d : shape) {
    if (d < 0) throw std::invalid_argument("negative dimension in shape " + shape_string(shape));
    n *= d;
  }
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape) : shape_(std::move(shape)), values_(Eigen::VectorXd::Zero(shape_size(shape_))) {}

Tensor::Tensor(Shape shape, Eigen::VectorXd values) : shape_(std::move(shape)), values_(std::move(values)) {
  if (shape_size(shape_) != values_.size()) {
    throw std::invalid_argument("tensor data length " + std::to_string(values_.size()) +
                                " does not match shape " + shape_string(shape_));
  }
}

Tensor::Tensor(Shape shape, std::initializer_list<double> values) : shape_(std::move(shape)) {
  if (shape_size(shape_) != static_cast<Index>(values.size())) {
    throw std::invalid_argument("tensor data length " + std::to_string(values.size()) +
                                " does not match shape " + shape_string(shape_));
  }
  values_.resize(static_cast<Index>(values.size()));
  Index i = 0;
  for (double v : values) values_[i++] = v;
}

Tensor Tensor::constant(Shape shape, double value) {
  Tensor t(std::move(shape));
  t.values_.setConstant(value);
  return t;
}

Tensor Tensor::from_matrix(const Eigen::Ref<const RowMatrixXd>& m) {
  Tensor t(Shape{m.rows(), m.cols()});
  t.matrix() = m;
  return t;
}

double Tensor::at(std::initializer_list<Index> idx) const {
  if (static_cast<Index>(idx.size()) != rank()) throw std::out_of_range("index rank mismatch");
  Index flat = 0;
  std::size_t axis = 0;
  for (Index i : idx) {
    if (i < 0 || i >= shape_[axis]) throw std::out_of_range("index out of range");
    flat = flat * shape_[axis] + i;
    ++axis;
  }
  return values_[flat];
}

double Tensor::item() const {
  if (values_.size() != 1) throw std::logic_error("item() on tensor of shape " + shape_string(shape_));
  return values_[0];
}

MatrixMap Tensor::matrix(Index rows) {
  const Index cols = rows == 0 ? 0 : values_.size() / rows;
  return MatrixMap(values_.data(), rows, cols);
}

ConstMatrixMap Tensor::matrix(Index rows) const {
  const Index cols = rows == 0 ? 0 : values_.size() / rows;
  return ConstMatrixMap(values_.data(), rows, cols);
}

MatrixMap Tensor::matrix() {
  if (rank() == 2) return MatrixMap(values_.data(), shape_[0], shape_[1]);
  if (rank() <= 1) return MatrixMap(values_.data(), 1, values_.size());
  throw std::logic_error("matrix() on tensor of shape " + shape_string(shape_));
}

ConstMatrixMap Tensor::matrix() const {
  if (rank() == 2) return ConstMatrixMap(values_.data(), shape_[0], shape_[1]);
  if (rank() <= 1) return ConstMatrixMap(values_.data(), 1, values_.size());
  throw std::logic_error("matrix() on tensor of shape " + shape_string(shape_));
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_size(shape) != size()) {
    throw std::invalid_argument("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  }
  return Tensor(std::move(shape), values_);
}

bool operator==(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() && a.values() == b.values();
}

}  // namespace tfuse
