// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major 2-D tensors. Vectors are stored as n x 1 columns (or 1 x n
// rows where an operation says so); scalars are 1 x 1.

#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace super {

/// Raised when a primitive produces NaN/Inf. what() names the primitive.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised on dimension disagreement between operands or against a config.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct Shape {
  std::size_t rows = 0;
  std::size_t cols = 0;

  std::size_t numel() const { return rows * cols; }
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0));
  Tensor(std::size_t rows, std::size_t cols, T fill = T(0)) : Tensor(Shape{rows, cols}, fill) {}
  Tensor(Shape shape, std::vector<T> data);

  /// Row-major nested initializer, e.g. {{1, 2}, {3, 4}}.
  static Tensor from_rows(std::initializer_list<std::initializer_list<T>> rows);
  static Tensor column(std::initializer_list<T> values);
  static Tensor identity(std::size_t n);

  const Shape& shape() const { return shape_; }
  std::size_t rows() const { return shape_.rows; }
  std::size_t cols() const { return shape_.cols; }
  std::size_t numel() const { return data_.size(); }

  T& operator()(std::size_t r, std::size_t c) { return data_[r * shape_.cols + c]; }
  T operator()(std::size_t r, std::size_t c) const { return data_[r * shape_.cols + c]; }
  T& operator[](std::size_t i) { return data_[i]; }
  T operator[](std::size_t i) const { return data_[i]; }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  std::vector<T>& storage() { return data_; }
  const std::vector<T>& storage() const { return data_; }

  void fill(T value);
  bool all_finite() const;

  /// Converts element type (float <-> double).
  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(shape_);
    for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
    return out;
  }

  bool operator==(const Tensor&) const = default;

 private:
  Shape shape_{};
  std::vector<T> data_;
};

using Matrix = Tensor<float>;

/// Maximum absolute elementwise difference; throws on shape mismatch.
template <typename T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b);

/// Column permutation: out[:, j] = x[:, perm[j]].
template <typename T>
Tensor<T> permute_columns(const Tensor<T>& x, std::span<const std::size_t> perm);

}  // namespace super
