// SPDX-License-Identifier: Apache-2.0

#include "super/tensor.hpp"

#include <algorithm>
#include <cmath>

namespace super {

std::string Shape::str() const { return std::to_string(rows) + "x" + std::to_string(cols); }

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : shape_(shape), data_(shape.numel(), fill) {
  if (shape.rows == 0 || shape.cols == 0) throw ShapeError("tensor dimensions must be positive");
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data) : shape_(shape), data_(std::move(data)) {
  if (shape.rows == 0 || shape.cols == 0) throw ShapeError("tensor dimensions must be positive");
  if (data_.size() != shape.numel())
    throw ShapeError("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                     shape.str());
}

template <typename T>
Tensor<T> Tensor<T>::from_rows(std::initializer_list<std::initializer_list<T>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r ? rows.begin()->size() : 0;
  std::vector<T> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw ShapeError("ragged initializer");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor(Shape{r, c}, std::move(data));
}

template <typename T>
Tensor<T> Tensor<T>::column(std::initializer_list<T> values) {
  return Tensor(Shape{values.size(), 1}, std::vector<T>(values));
}

template <typename T>
Tensor<T> Tensor<T>::identity(std::size_t n) {
  Tensor out(Shape{n, n});
  for (std::size_t i = 0; i < n; ++i) out(i, i) = T(1);
  return out;
}

template <typename T>
void Tensor<T>::fill(T value) {
  std::fill(data_.begin(), data_.end(), value);
}

template <typename T>
bool Tensor<T>::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
}

template <typename T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) throw ShapeError("max_abs_diff: " + a.shape().str() + " vs " + b.shape().str());
  T m = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

template <typename T>
Tensor<T> permute_columns(const Tensor<T>& x, std::span<const std::size_t> perm) {
  if (perm.size() != x.cols()) throw ShapeError("permute_columns: permutation length mismatch");
  Tensor<T> out(x.shape());
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t j = 0; j < x.cols(); ++j) out(r, j) = x(r, perm[j]);
  return out;
}

template class Tensor<float>;
template class Tensor<double>;
template float max_abs_diff(const Tensor<float>&, const Tensor<float>&);
template double max_abs_diff(const Tensor<double>&, const Tensor<double>&);
template Tensor<float> permute_columns(const Tensor<float>&, std::span<const std::size_t>);
template Tensor<double> permute_columns(const Tensor<double>&, std::span<const std::size_t>);

}  // namespace super
