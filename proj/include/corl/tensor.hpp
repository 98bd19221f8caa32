#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "corl/errors.hpp"

namespace corl {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

template <typename Scalar>
using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

inline Index shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    os << (i ? ", " : "") << shape[i];
  }
  os << ')';
  return os.str();
}

/// Dense row-major tensor over an Eigen array.
///
/// The last dimension is the fastest-varying one, so a feature map of shape
/// (N, H, W, C) viewed through matrix() is an (N*H*W) x C matrix whose rows
/// are the per-position channel vectors.
template <typename Scalar>
class Tensor {
 public:
  using scalar_type = Scalar;
  using MatrixMap = Eigen::Map<RowMatrix<Scalar>>;
  using ConstMatrixMap = Eigen::Map<const RowMatrix<Scalar>>;

  Tensor() = default;

  explicit Tensor(Shape shape) : shape_(std::move(shape)) {
    check_shape();
    data_ = Array<Scalar>::Zero(shape_size(shape_));
  }

  Tensor(Shape shape, Array<Scalar> data) : shape_(std::move(shape)), data_(std::move(data)) {
    check_shape();
    if (data_.size() != shape_size(shape_)) {
      throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                           " does not match shape " + shape_string(shape_));
    }
  }

  Tensor(Shape shape, std::initializer_list<Scalar> values)
      : Tensor(std::move(shape), Eigen::Map<const Array<Scalar>>(
                                     values.begin(), static_cast<Index>(values.size()))) {}

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

  static Tensor constant(Shape shape, Scalar value) {
    Tensor t(std::move(shape));
    t.data_.setConstant(value);
    return t;
  }

  const Shape& shape() const noexcept { return shape_; }
  Index rank() const noexcept { return static_cast<Index>(shape_.size()); }
  Index dim(Index axis) const { return shape_.at(static_cast<std::size_t>(axis)); }
  Index size() const noexcept { return data_.size(); }

  Array<Scalar>& array() noexcept { return data_; }
  const Array<Scalar>& array() const noexcept { return data_; }
  Scalar* data() noexcept { return data_.data(); }
  const Scalar* data() const noexcept { return data_.data(); }

  Scalar& operator[](Index i) { return data_[i]; }
  Scalar operator[](Index i) const { return data_[i]; }

  Scalar& at(std::initializer_list<Index> idx) { return data_[offset(idx)]; }
  Scalar at(std::initializer_list<Index> idx) const { return data_[offset(idx)]; }

  /// All but the last dimension flattened into rows.
  MatrixMap matrix() { return MatrixMap(data(), rows(), cols()); }
  ConstMatrixMap matrix() const { return ConstMatrixMap(data(), rows(), cols()); }

  MatrixMap matrix(Index r, Index c) {
    check_view(r, c);
    return MatrixMap(data(), r, c);
  }
  ConstMatrixMap matrix(Index r, Index c) const {
    check_view(r, c);
    return ConstMatrixMap(data(), r, c);
  }

  Tensor reshaped(Shape shape) const { return Tensor(std::move(shape), data_); }

  template <typename Other>
  Tensor<Other> cast() const {
    return Tensor<Other>(shape_, data_.template cast<Other>());
  }

  bool all_finite() const { return data_.isFinite().all(); }

  /// Throws NumericalError naming `what` if any entry is NaN or Inf.
  void check_finite(const std::string& what) const {
    if (!all_finite()) throw NumericalError("non-finite values in " + what);
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && (a.data_ == b.data_).all();
  }

 private:
  Index rows() const { return shape_.empty() ? 1 : data_.size() / std::max<Index>(cols(), 1); }
  Index cols() const { return shape_.empty() ? 1 : shape_.back(); }

  void check_shape() const {
    for (Index d : shape_) {
      if (d <= 0) throw DimensionError("tensor dimensions must be positive, got " + shape_string(shape_));
    }
  }

  void check_view(Index r, Index c) const {
    if (r * c != size()) {
      throw DimensionError("cannot view " + shape_string(shape_) + " as " + std::to_string(r) +
                           "x" + std::to_string(c));
    }
  }

  Index offset(std::initializer_list<Index> idx) const {
    if (idx.size() != shape_.size()) throw DimensionError("index rank mismatch");
    Index off = 0;
    std::size_t k = 0;
    for (Index i : idx) {
      off = off * shape_[k++] + i;
    }
    return off;
  }

  Shape shape_;
  Array<Scalar> data_;
};

}  // namespace corl
