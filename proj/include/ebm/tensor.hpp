#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <cstring>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "ebm/error.hpp"

namespace ebm {

using Shape = std::vector<std::size_t>;

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using RowMatrixXd = RowMatrix<double>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

// Dense row-major tensor. Rank 0 is a scalar (one element).
template <typename Scalar>
class Tensor {
 public:
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  using MatrixMap = Eigen::Map<RowMatrix<Scalar>>;
  using ConstMatrixMap = Eigen::Map<const RowMatrix<Scalar>>;

  Tensor() : values_(Vector::Zero(1)) {}

  explicit Tensor(Shape shape) : shape_(std::move(shape)) {
    check_dims();
    values_ = Vector::Zero(static_cast<Eigen::Index>(shape_size(shape_)));
  }

  Tensor(Shape shape, std::span<const Scalar> data) : shape_(std::move(shape)) {
    check_dims();
    if (data.size() != shape_size(shape_))
      throw ShapeError("tensor data length " + std::to_string(data.size()) +
                       " does not match shape " + shape_string(shape_));
    values_ = Eigen::Map<const Vector>(data.data(), static_cast<Eigen::Index>(data.size()));
  }

  Tensor(Shape shape, std::initializer_list<Scalar> data)
      : Tensor(std::move(shape), std::span<const Scalar>(data.begin(), data.size())) {}

  static Tensor scalar(Scalar value) {
    Tensor t;
    t.values_(0) = value;
    return t;
  }

  static Tensor constant(Shape shape, Scalar value) {
    Tensor t(std::move(shape));
    t.values_.setConstant(value);
    return t;
  }

  template <typename Derived>
  static Tensor from_matrix(const Eigen::MatrixBase<Derived>& m) {
    Tensor t(Shape{static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())});
    t.matrix() = m;
    return t;
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return static_cast<std::size_t>(values_.size()); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }

  Scalar* data() { return values_.data(); }
  const Scalar* data() const { return values_.data(); }
  std::span<Scalar> span() { return {values_.data(), size()}; }
  std::span<const Scalar> span() const { return {values_.data(), size()}; }

  Vector& vec() { return values_; }
  const Vector& vec() const { return values_; }
  auto array() { return values_.array(); }
  auto array() const { return values_.array(); }

  Scalar& operator[](std::size_t i) { return values_(static_cast<Eigen::Index>(i)); }
  Scalar operator[](std::size_t i) const { return values_(static_cast<Eigen::Index>(i)); }
  Scalar item() const { return values_(0); }

  // Rank-2 view; rank-1 tensors are viewed as a single row.
  MatrixMap matrix() {
    auto [r, c] = matrix_dims();
    return MatrixMap(values_.data(), r, c);
  }
  ConstMatrixMap matrix() const {
    auto [r, c] = matrix_dims();
    return ConstMatrixMap(values_.data(), r, c);
  }

  Tensor reshaped(Shape shape) const {
    if (shape_size(shape) != size())
      throw ShapeError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
    Tensor t = *this;
    t.shape_ = std::move(shape);
    return t;
  }

  void set_zero() { values_.setZero(); }

  bool all_finite() const { return values_.allFinite(); }

  // Bitwise equality of shape and payload.
  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ &&
           std::memcmp(a.data(), b.data(), a.size() * sizeof(Scalar)) == 0;
  }

 private:
  void check_dims() const {
    for (auto d : shape_)
      if (d == 0) throw ShapeError("tensor dimensions must be positive: " + shape_string(shape_));
  }

  std::pair<Eigen::Index, Eigen::Index> matrix_dims() const {
    if (shape_.size() == 2)
      return {static_cast<Eigen::Index>(shape_[0]), static_cast<Eigen::Index>(shape_[1])};
    if (shape_.size() <= 1) return {1, static_cast<Eigen::Index>(size())};
    throw ShapeError("matrix view needs rank <= 2, got " + shape_string(shape_));
  }

  Shape shape_;
  Vector values_;
};

using TensorXd = Tensor<double>;

}  // namespace ebm
