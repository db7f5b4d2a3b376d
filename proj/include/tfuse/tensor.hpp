#pragma once

#include <Eigen/Core>

#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace tfuse {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using RowMatrixXd = RowMatrix<double>;
using MatrixMap = Eigen::Map<RowMatrixXd>;
using ConstMatrixMap = Eigen::Map<const RowMatrixXd>;

Index shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Dense row-major float64 array with an explicit shape.
///
/// Rank 0 is a scalar (one element). A dimension of size zero is allowed and
/// gives an empty tensor.
class Tensor {
 public:
  Tensor() : Tensor(Shape{0}) {}
  explicit Tensor(Shape shape);
  Tensor(Shape shape, Eigen::VectorXd values);
  Tensor(Shape shape, std::initializer_list<double> values);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor constant(Shape shape, double value);
  static Tensor ones(Shape shape) { return constant(std::move(shape), 1.0); }
  static Tensor scalar(double value) { return Tensor(Shape{}, {value}); }
  static Tensor from_matrix(const Eigen::Ref<const RowMatrixXd>& m);

  const Shape& shape() const { return shape_; }
  Index rank() const { return static_cast<Index>(shape_.size()); }
  Index dim(Index axis) const { return shape_.at(static_cast<std::size_t>(axis)); }
  Index size() const { return values_.size(); }
  bool empty() const { return values_.size() == 0; }

  double* data() { return values_.data(); }
  const double* data() const { return values_.data(); }
  std::span<const double> span() const { return {values_.data(), static_cast<std::size_t>(values_.size())}; }

  Eigen::VectorXd& values() { return values_; }
  const Eigen::VectorXd& values() const { return values_; }

  double& operator[](Index i) { return values_[i]; }
  double operator[](Index i) const { return values_[i]; }
  double at(std::initializer_list<Index> idx) const;

  /// The only element of a one-element tensor.
  double item() const;

  /// Row-major view with the given row count; columns are inferred.
  MatrixMap matrix(Index rows);
  ConstMatrixMap matrix(Index rows) const;
  /// Rank-2 view (rank-1 tensors are viewed as a single row).
  MatrixMap matrix();
  ConstMatrixMap matrix() const;

  Tensor reshaped(Shape shape) const;

  bool all_finite() const { return values_.allFinite(); }

 private:
  Shape shape_;
  Eigen::VectorXd values_;
};

bool operator==(const Tensor& a, const Tensor& b);

}  // namespace tfuse
