// SPDX-License-Identifier: Apache-2.0
//
// Reverse-mode differentiation over Tensor<T>. A Tape records every primitive
// application in execution order; backward() walks it once in reverse.

#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <utility>
#include <vector>

#include "super/tensor.hpp"

namespace super {

template <typename T>
class Tape;

/// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
template <typename T>
class Var {
 public:
  Var() = default;

  Tape<T>* tape() const { return tape_; }
  std::size_t id() const { return id_; }
  const Tensor<T>& value() const;
  const Shape& shape() const { return value().shape(); }
  bool tracked() const;

 private:
  friend class Tape<T>;
  Var(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape<T>* tape_ = nullptr;
  std::size_t id_ = 0;
};

template <typename T>
class Tape {
 public:
  /// Called during backward with the output node id; accumulates into inputs.
  using BackwardFn = std::function<void(Tape&, std::size_t)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Untracked input.
  Var<T> constant(Tensor<T> value);
  /// Tracked leaf; its gradient is readable through grad() after backward.
  Var<T> variable(Tensor<T> value);
  /// Tracked leaf whose gradient is added into `sink` at the end of backward.
  Var<T> parameter(const Tensor<T>& value, Tensor<T>& sink);

  /// Reverse accumulation from a 1x1 loss. A tape supports exactly one call.
  void backward(const Var<T>& loss);

  /// Gradient of a tracked node after backward (zeros if it did not feed the loss).
  Tensor<T> grad(const Var<T>& v) const;

  std::size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }
  const char* op_name(std::size_t id) const { return nodes_[id].op; }

  // Primitive plumbing.
  Var<T> record(const char* op, Tensor<T> value, std::span<const Var<T>> inputs, BackwardFn backward);
  const Tensor<T>& value(std::size_t id) const { return nodes_[id].value; }
  bool tracked(std::size_t id) const { return nodes_[id].tracked; }
  const Tensor<T>& upstream(std::size_t id) const { return nodes_[id].grad; }
  /// Lazily allocated gradient accumulator for node `id`.
  Tensor<T>& accumulator(std::size_t id);

 private:
  struct Node {
    const char* op = "";
    Tensor<T> value;
    Tensor<T> grad;
    bool tracked = false;
    Tensor<T>* sink = nullptr;
    BackwardFn backward;
  };

  std::deque<Node> nodes_;  // stable references across appends
  bool consumed_ = false;
};

template <typename T>
const Tensor<T>& Var<T>::value() const {
  return tape_->value(id_);
}

template <typename T>
bool Var<T>::tracked() const {
  return tape_->tracked(id_);
}

// Primitives. Every primitive validates shapes (ShapeError) and rejects
// non-finite outputs (NumericError naming the primitive).

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> transpose(const Var<T>& a);
template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b);
/// Hadamard product.
template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> div(const Var<T>& a, const Var<T>& b);
/// alpha * a + beta, elementwise.
template <typename T>
Var<T> affine(const Var<T>& a, T alpha, T beta);
/// a * s for a 1x1 `s`.
template <typename T>
Var<T> scale_by(const Var<T>& a, const Var<T>& s);
/// Output clamped to the open interval (0, 1) at the type's resolution.
template <typename T>
Var<T> sigmoid(const Var<T>& a);
/// axis 0 normalizes each column, axis 1 each row. Max-subtracted.
template <typename T>
Var<T> softmax(const Var<T>& a, int axis);
/// ||x_j||^2 / (1 + ||x_j||^2) for each column; d x N -> 1 x N.
template <typename T>
Var<T> squash_rate_cols(const Var<T>& x);
/// Column mean; d x N -> d x 1.
template <typename T>
Var<T> avg_pool_cols(const Var<T>& x);
/// d x 1 -> d x n with identical columns.
template <typename T>
Var<T> broadcast_cols(const Var<T>& v, std::size_t n);
/// 1 x N -> d x N with identical rows.
template <typename T>
Var<T> broadcast_rows(const Var<T>& v, std::size_t d);
/// x * diag(g); g holds N values (either orientation).
template <typename T>
Var<T> diag_scale_cols(const Var<T>& x, const Var<T>& g);
/// Per-column mean; d x N -> 1 x N.
template <typename T>
Var<T> column_mean(const Var<T>& x);
/// Per-column population standard deviation sqrt(var + eps); d x N -> 1 x N.
template <typename T>
Var<T> column_std(const Var<T>& x, T eps);
/// Per-column sum; d x N -> 1 x N.
template <typename T>
Var<T> col_sum(const Var<T>& x);
template <typename T>
Var<T> concat_cols(std::span<const Var<T>> parts);
template <typename T>
Var<T> concat_rows(std::span<const Var<T>> parts);
template <typename T>
Var<T> slice_row(const Var<T>& x, std::size_t row);
template <typename T>
Var<T> add_n(std::span<const Var<T>> parts);
/// sum_k gates(k, column) * parts[k].
template <typename T>
Var<T> gated_sum(std::span<const Var<T>> parts, const Var<T>& gates, std::size_t column);
template <typename T>
Var<T> sum_all(const Var<T>& x);
template <typename T>
Var<T> mean_all(const Var<T>& x);
/// Mean binary cross-entropy from logits against soft labels in [0, 1].
template <typename T>
Var<T> bce_with_logits(const Var<T>& logits, const Tensor<T>& labels);
/// n x n matrix w0 * I + (w1 / n) * ones, from a 2 x 1 weight. Commutes with
/// every permutation matrix.
template <typename T>
Var<T> equivariant_mixer(const Var<T>& w, std::size_t n);

template <typename T>
std::pair<Var<T>, Var<T>> column_stats(const Var<T>& x, T eps) {
  return {column_mean(x), column_std(x, eps)};
}

/// Plain (untaped) matmul shared by the primitive and by callers that only
/// need values.
template <typename T>
Tensor<T> matmul_values(const Tensor<T>& a, const Tensor<T>& b);

}  // namespace super
