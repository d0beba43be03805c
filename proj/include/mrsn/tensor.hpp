#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "mrsn/error.hpp"

namespace mrsn {

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

/// Dense row-major array of rank 1..4.
///
/// The float instantiation (DenseArray) is the storage type of every model
/// quantity; the double instantiation exists so numerical checks can run the
/// same code paths at higher precision.
template <typename T>
class BasicArray {
 public:
  using value_type = T;

  BasicArray() = default;

  explicit BasicArray(Shape shape, T fill = T(0)) : shape_(std::move(shape)) {
    check_shape(shape_);
    data_.assign(shape_numel(shape_), fill);
  }

  BasicArray(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    check_shape(shape_);
    if (shape_numel(shape_) != data_.size()) {
      throw DimensionError("array of shape " + shape_str(shape_) + " cannot hold " +
                           std::to_string(data_.size()) + " values");
    }
  }

  static BasicArray matrix(std::size_t rows, std::size_t cols, std::vector<T> data) {
    return BasicArray({rows, cols}, std::move(data));
  }
  static BasicArray vector(std::vector<T> data) {
    const std::size_t n = data.size();
    return BasicArray({n}, std::move(data));
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  /// Rows/cols view a rank-2 array; a rank-1 array reads as a single row.
  std::size_t rows() const { return rank() == 1 ? 1 : shape_.at(0); }
  std::size_t cols() const { return rank() == 1 ? shape_.at(0) : shape_.at(1); }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  T* ptr() noexcept { return data_.data(); }
  const T* ptr() const noexcept { return data_.data(); }
  const std::vector<T>& values() const noexcept { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  T& at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
  const T& at(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }
  T& at(std::size_t c, std::size_t i, std::size_t j) {
    return data_[(c * shape_[1] + i) * shape_[2] + j];
  }
  const T& at(std::size_t c, std::size_t i, std::size_t j) const {
    return data_[(c * shape_[1] + i) * shape_[2] + j];
  }

  BasicArray reshaped(Shape shape) const {
    return BasicArray(std::move(shape), data_);
  }

  template <typename U>
  BasicArray<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return BasicArray<U>(shape_, std::move(out));
  }

  bool all_finite() const {
    for (T v : data_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  /// Boundary check: NaN/Inf never cross a module interface.
  void require_finite(std::string_view where) const {
    if (!all_finite()) throw NumericError(std::string(where) + ": non-finite value in array");
  }

  friend bool operator==(const BasicArray& a, const BasicArray& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  static void check_shape(const Shape& shape) {
    if (shape.empty() || shape.size() > 4) {
      throw DimensionError("array rank must be 1..4, got shape " + shape_str(shape));
    }
    for (std::size_t d : shape) {
      if (d == 0) throw DimensionError("array dims must be positive, got " + shape_str(shape));
    }
  }

  Shape shape_;
  std::vector<T> data_;
};

using DenseArray = BasicArray<float>;

}  // namespace mrsn
