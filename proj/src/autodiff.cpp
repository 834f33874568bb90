// SPDX-License-Identifier: Apache-2.0

#include "super/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace super {

namespace {

template <typename T>
void require_same(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + a.shape().str() + " vs " + b.shape().str());
}

template <typename T>
void require_same_tape(const char* op, const Var<T>& a, const Var<T>& b) {
  if (a.tape() != b.tape() || a.tape() == nullptr)
    throw std::invalid_argument(std::string(op) + ": operands live on different tapes");
}

// out += a * b^T  (a: p x r, b: q x r, out: p x q)
template <typename T>
void gemm_nt_acc(const Tensor<T>& a, const Tensor<T>& b, Tensor<T>& out) {
  const std::size_t p = a.rows(), r = a.cols(), q = b.rows();
  // Transposed copy of b so the inner loop runs over contiguous memory.
  std::vector<T> bt(r * q);
  for (std::size_t j = 0; j < q; ++j)
    for (std::size_t k = 0; k < r; ++k) bt[k * q + j] = b(j, k);
  std::vector<T> row(q);
  for (std::size_t i = 0; i < p; ++i) {
    std::fill(row.begin(), row.end(), T(0));
    for (std::size_t k = 0; k < r; ++k) {
      const T aik = a(i, k);
      const T* bk = &bt[k * q];
      for (std::size_t j = 0; j < q; ++j) row[j] += aik * bk[j];
    }
    T* oi = &out.data()[i * q];
    for (std::size_t j = 0; j < q; ++j) oi[j] += row[j];
  }
}

// out += a^T * b  (a: r x p, b: r x q, out: p x q)
template <typename T>
void gemm_tn_acc(const Tensor<T>& a, const Tensor<T>& b, Tensor<T>& out) {
  const std::size_t r = a.rows(), p = a.cols(), q = b.cols();
  for (std::size_t k = 0; k < r; ++k) {
    const T* ak = &a.data()[k * p];
    const T* bk = &b.data()[k * q];
    for (std::size_t i = 0; i < p; ++i) {
      const T aki = ak[i];
      T* oi = &out.data()[i * q];
      for (std::size_t j = 0; j < q; ++j) oi[j] += aki * bk[j];
    }
  }
}

template <typename T>
T clamp_open_unit(T y) {
  constexpr T lo = std::numeric_limits<T>::min();
  constexpr T hi = T(1) - std::numeric_limits<T>::epsilon() / T(2);
  return std::clamp(y, lo, hi);
}

template <typename T>
T stable_sigmoid(T x) {
  if (x >= 0) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

}  // namespace

// ---------------------------------------------------------------------------
// Tape

template <typename T>
Var<T> Tape<T>::constant(Tensor<T> value) {
  return record("constant", std::move(value), {}, nullptr);
}

template <typename T>
Var<T> Tape<T>::variable(Tensor<T> value) {
  Var<T> v = record("variable", std::move(value), {}, nullptr);
  nodes_[v.id()].tracked = true;
  return v;
}

template <typename T>
Var<T> Tape<T>::parameter(const Tensor<T>& value, Tensor<T>& sink) {
  if (sink.shape() != value.shape()) throw ShapeError("parameter: gradient sink shape mismatch");
  Var<T> v = record("parameter", value, {}, nullptr);
  nodes_[v.id()].tracked = true;
  nodes_[v.id()].sink = &sink;
  return v;
}

template <typename T>
Var<T> Tape<T>::record(const char* op, Tensor<T> value, std::span<const Var<T>> inputs, BackwardFn backward) {
  if (consumed_) throw std::logic_error(std::string(op) + ": tape already consumed by backward");
  if (!value.all_finite()) throw NumericError(std::string("non-finite output from ") + op);
  bool tracked = false;
  for (const auto& in : inputs) {
    if (in.tape() != this) throw std::invalid_argument(std::string(op) + ": input from a different tape");
    tracked = tracked || nodes_[in.id()].tracked;
  }
  Node node;
  node.op = op;
  node.value = std::move(value);
  node.tracked = tracked;
  if (tracked) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var<T>(this, nodes_.size() - 1);
}

template <typename T>
Tensor<T>& Tape<T>::accumulator(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.numel() == 0) n.grad = Tensor<T>(n.value.shape());
  return n.grad;
}

template <typename T>
void Tape<T>::backward(const Var<T>& loss) {
  if (loss.tape() != this) throw std::invalid_argument("backward: loss from a different tape");
  if (consumed_) throw std::logic_error("backward: tape already consumed");
  if (loss.shape() != Shape{1, 1}) throw ShapeError("backward: loss must be 1x1, got " + loss.shape().str());
  consumed_ = true;
  if (!nodes_[loss.id()].tracked) return;
  accumulator(loss.id()).fill(T(1));
  for (std::size_t id = loss.id() + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.tracked || n.grad.numel() == 0 || !n.backward) continue;
    n.backward(*this, id);
  }
  for (auto& n : nodes_) {
    if (n.sink == nullptr || n.grad.numel() == 0) continue;
    if (!n.grad.all_finite()) throw NumericError("non-finite gradient reaching a parameter");
    for (std::size_t i = 0; i < n.grad.numel(); ++i) (*n.sink)[i] += n.grad[i];
  }
}

template <typename T>
Tensor<T> Tape<T>::grad(const Var<T>& v) const {
  const Node& n = nodes_.at(v.id());
  if (n.grad.numel() == 0) return Tensor<T>(n.value.shape());
  return n.grad;
}

// ---------------------------------------------------------------------------
// Primitives

template <typename T>
Tensor<T> matmul_values(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.cols() != b.rows())
    throw ShapeError("matmul: inner dimensions disagree " + a.shape().str() + " * " + b.shape().str());
  const std::size_t p = a.rows(), q = a.cols(), r = b.cols();
  Tensor<T> out(Shape{p, r});
  for (std::size_t i = 0; i < p; ++i) {
    T* oi = &out.data()[i * r];
    for (std::size_t k = 0; k < q; ++k) {
      const T aik = a(i, k);
      const T* bk = &b.data()[k * r];
      for (std::size_t j = 0; j < r; ++j) oi[j] += aik * bk[j];
    }
  }
  return out;
}

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  require_same_tape("matmul", a, b);
  Tape<T>& tape = *a.tape();
  const Var<T> ins[] = {a, b};
  return tape.record("matmul", matmul_values(a.value(), b.value()), ins,
                     [ia = a.id(), ib = b.id()](Tape<T>& t, std::size_t out) {
                       const Tensor<T>& g = t.upstream(out);
                       if (t.tracked(ia)) gemm_nt_acc(g, t.value(ib), t.accumulator(ia));
                       if (t.tracked(ib)) gemm_tn_acc(t.value(ia), g, t.accumulator(ib));
                     });
}

template <typename T>
Var<T> transpose(const Var<T>& a) {
  const Tensor<T>& x = a.value();
  Tensor<T> y(Shape{x.cols(), x.rows()});
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = 0; j < x.cols(); ++j) y(j, i) = x(i, j);
  const Var<T> ins[] = {a};
  return a.tape()->record("transpose", std::move(y), ins, [ia = a.id()](Tape<T>& t, std::size_t out) {
    const Tensor<T>& g = t.upstream(out);
    Tensor<T>& ga = t.accumulator(ia);
    for (std::size_t i = 0; i < ga.rows(); ++i)
      for (std::size_t j = 0; j < ga.cols(); ++j) ga(i, j) += g(j, i);
  });
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require_same_tape("add", a, b);
  require_same("add", a.value(), b.value());
  Tensor<T> y = a.value();
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] += b.value()[i];
  const Var<T> ins[] = {a, b};
  return a.tape()->record("add", std::move(y), ins, [ia = a.id(), ib = b.id()](Tape<T>& t, std::size_t out) {
    const Tensor<T>& g = t.upstream(out);
    for (std::size_t id : {ia, ib}) {
      if (!t.tracked(id)) continue;
      Tensor<T>& acc = t.accumulator(id);
      for (std::size_t i = 0; i < g.numel(); ++i) acc[i] += g[i];
    }
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  require_same_tape("sub", a, b);
  require_same("sub", a.value(), b.value());
  Tensor<T> y = a.value();
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] -= b.value()[i];
  const Var<T> ins[] = {a, b};
  return a.tape()->record("sub", std::move(y), ins, [ia = a.id(), ib = b.id()](Tape<T>& t, std::size_t out) {
    const Tensor<T>& g = t.upstream(out);
    if (t.tracked(ia)) {
      Tensor<T>& acc = t.accumulator(ia);
      for (std::size_t i = 0; i < g.numel(); ++i) acc[i] += g[i];
    }
    if (t.tracked(ib)) {
      Tensor<T>& acc = t.accumulator(ib);
      for (std::size_t i = 0; i < g.numel(); ++i) acc[i] -= g[i];
    }
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  require_same_tape("mul", a, b);
  require_same("mul", a.value(), b.value());
  Tensor<T> y = a.value();
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] *= b.value()[i];
  const Var<T> ins[] = {a, b};
  return a.tape()->record("mul", std::move(y), ins, [ia = a.id(), ib = b.id()](Tape<T>& t, std::size_t out) {
    const Tensor<T>& g = t.upstream(out);
    if (t.tracked(ia)) {
      Tensor<T>& acc = t.accumulator(ia);
      const Tensor<T>& bv = t.value(ib);
      for (std::size_t i = 0; i < g.numel(); ++i) acc[i] += g[i] * bv[i];
    }
    if (t.tracked(ib)) {
      Tensor<T>& acc = t.accumulator(ib);
      const Tensor<T>& av = t.value(ia);
      for (std::size_t i = 0; i < g.numel(); ++i) acc[i] += g[i] * av[i];
    }
  });
}

template <typename T>
Var<T> div(const Var<T>& a, const Var<T>& b) {
  require_same_tape("div", a, b);
  require_same("div", a.value(), b.value());
  Tensor<T> y = a.value();
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] /= b.value()[i];
  const Var<T> ins[] = {a, b};
  return a.tape()->record("div", std::move(y), ins, [ia = a.id(), ib = b.id()](Tape<T>& t, std::size_t out) {
    const Tensor<T>& g = t.upstream(out);
    const Tensor<T>& bv = t.value(ib);
    if (t.tracked(ia)) {
      Tensor<T>& acc = t.accumulator(ia);
      for (std::size_t i = 0; i < g.numel(); ++i) acc[i] += g[i] / bv[i];
    }
    if (t.tracked(ib)) {
      Tensor<T>& acc = t.accumulator(ib);
      const Tensor<T>& y = t.value(out);
      for (std::size_t i = 0; i < g.numel(); ++i) acc[i] -= g[i] * y[i] / bv[i];
    }
  });
}

template <typename T>
Var<T> affine(const Var<T>& a, T alpha, T beta) {
  Tensor<T> y = a.value();
  for (auto& v : y.storage()) v = alpha * v + beta;
  const Var<T> ins[] = {a};
  return a.tape()->record("affine", std::move(y), ins, [ia = a.id(), alpha](Tape<T>& t, std::size_t out) {
    const Tensor<T>& g = t.upstream(out);
    Tensor<T>& acc = t.accumulator(ia);
    for (std::size_t i = 0; i < g.numel(); ++i) acc[i] += alpha * g[i];
  });
}

template <typename T>
Var<T> scale_by(const Var<T>& a, const Var<T>& s) {
  require_same_tape("scale_by", a, s);
  if (s.shape() != Shape{1, 1}) throw ShapeError("scale_by: scale must be 1x1");
  const T k = s.value()[0];
  Tensor<T> y = a.value();
  for (auto& v : y.storage()) v *= k;
  const Var<T> ins[] = {a, s};
  return a.tape()->record("scale_by", std::move(y), ins, [ia = a.id(), is = s.id()](Tape<T>& t, std::size_t out) {
    const Tensor<T>& g = t.upstream(out);
    if (t.tracked(ia)) {
      const T k = t.value(is)[0];
      Tensor<T>& acc = t.accumulator(ia);
      for (std::size_t i = 0; i < g.numel(); ++i) acc[i] += k * g[i];
    }
    if (t.tracked(is)) {
      const Tensor<T>& av = t.value(ia);
      T s = 0;
      for (std::size_t i = 0; i < g.numel(); ++i) s += g[i] * av[i];
      t.accumulator(is)[0] += s;
    }
  });
}

template <typename T>
Var<T> sigmoid(const Var<T>& a) {
  Tensor<T> y = a.value();
  for (auto& v : y.storage()) v = clamp_open_unit(stable_sigmoid(v));
  const Var<T> ins[] = {a};
  return a.tape()->record("sigmoid", std::move(y), ins, [ia = a.id()](Tape<T>& t, std::size_t out) {
    const Tensor<T>& g = t.upstream(out);
    const Tensor<T>& y = t.value(out);
    Tensor<T>& acc = t.accumulator(ia);
    for (std::size_t i = 0; i < g.numel(); ++i) acc[i] += g[i] * y[i] * (T(1) - y[i]);
  });
}

template <typename T>
Var<T> softmax(const Var<T>& a, int axis) {
  if (axis != 0 && axis != 1) throw std::invalid_argument("softmax: axis must be 0 or 1");
  const Tensor<T>& x = a.value();
  const std::size_t rows = x.rows(), cols = x.cols();
  // Lanes are the independent normalization groups; `len` entries per lane.
  const std::size_t lanes = axis == 0 ? cols : rows;
  const std::size_t len = axis == 0 ? rows : cols;
  auto index = [=](std::size_t lane, std::size_t k) { return axis == 0 ? k * cols + lane : lane * cols + k; };
  Tensor<T> y(x.shape());
  for (std::size_t l = 0; l < lanes; ++l) {
    T m = x[index(l, 0)];
    for (std::size_t k = 1; k < len; ++k) m = std::max(m, x[index(l, k)]);
    T z = 0;
    for (std::size_t k = 0; k < len; ++k) {
      const T e = std::exp(x[index(l, k)] - m);
      y[index(l, k)] = e;
      z += e;
    }
    for (std::size_t k = 0; k < len; ++k) y[index(l, k)] /= z;
  }
  const Var<T> ins[] = {a};
  return a.tape()->record("softmax", std::move(y), ins,
                          [ia = a.id(), lanes, len, index](Tape<T>& t, std::size_t out) {
                            const Tensor<T>& g = t.upstream(out);
                            const Tensor<T>& y = t.value(out);
                            Tensor<T>& acc = t.accumulator(ia);
                            for (std::size_t l = 0; l < lanes; ++l) {
                              T dot = 0;
                              for (std::size_t k = 0; k < len; ++k) dot += g[index(l, k)] * y[index(l, k)];
                              for (std::size_t k = 0; k < len; ++k) {
                                const std::size_t i = index(l, k);
                                acc[i] += y[i] * (g[i] - dot);
                              }
                            }
                          });
}

template <typename T>
Var<T> squash_rate_cols(const Var<T>& x) {
  const Tensor<T>& v = x.value();
  Tensor<T> y(Shape{1, v.cols()});
  for (std::size_t j = 0; j < v.cols(); ++j) {
    T n = 0;
    for (std::size_t i = 0; i < v.rows(); ++i) n += v(i, j) * v(i, j);
    y[j] = n / (T(1) + n);
  }
  const Var<T> ins[] = {x};
  return x.tape()->record("squash_rate_cols", std::move(y), ins, [ix = x.id()](Tape<T>& t, std::size_t out) {
    const Tensor<T>& g = t.upstream(out);
    const Tensor<T>& v = t.value(ix);
    Tensor<T>& acc = t.accumulator(ix);
    for (std::size_t j = 0; j < v.cols(); ++j) {
      T n = 0;
      for (std::size_t i = 0; i < v.rows(); ++i) n += v(i, j) * v(i, j);
      const T k = g[j] * T(2) / ((T(1) + n) * (T(1) + n));
      for (std::size_t i = 0; i < v.rows(); ++i) acc(i, j) += k * v(i, j);
    }
  });
}

template <typename T>
Var<T> avg_pool_cols(const Var<T>& x) {
  const Tensor<T>& v = x.value();
  Tensor<T> y(Shape{v.rows(), 1});
  const T inv = T(1) / static_cast<T>(v.cols());
  for (std::size_t i = 0; i < v.rows(); ++i) {
    T s = 0;
    for (std::size_t j = 0; j < v.cols(); ++j) s += v(i, j);
    y[i] = s * inv;
  }
  const Var<T> ins[] = {x};
  return x.tape()->record("avg_pool_cols", std::move(y), ins, [ix = x.id(), inv](Tape<T>& t, std::size_t out) {
    const Tensor<T>& g = t.upstream(out);
    Tensor<T>& acc = t.accumulator(ix);
    for (std::size_t i = 0; i < acc.rows(); ++i)
      for (std::size_t j = 0; j < acc.cols(); ++j) acc(i, j) += g[i] * inv;
  });
}

template <typename T>
Var<T> broadcast_cols(const Var<T>& v, std::size_t n) {
  if (v.shape().cols != 1) throw ShapeError("broadcast_cols: expects a column vector, got " + v.shape().str());
  if (n == 0) throw ShapeError("broadcast_cols: N must be >= 1");
  const Tensor<T>& x = v.value();
  Tensor<T> y(Shape{x.rows(), n});
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = 0; j < n; ++j) y(i, j) = x[i];
  const Var<T> ins[] = {v};
  return v.tape()->record("broadcast_cols", std::move(y), ins, [iv = v.id()](Tape<T>& t, std::size_t out) {
    const Tensor<T>& g = t.upstream(out);
    Tensor<T>& acc = t.accumulator(iv);
    for (std::size_t i = 0; i < g.rows(); ++i) {
      T s = 0;
      for (std::size_t j = 0; j < g.cols(); ++j) s += g(i, j);
      acc[i] += s;
    }
  });
}

template <typename T>
Var<T> broadcast_rows(const Var<T>& v, std::size_t d) {
  if (v.shape().rows != 1) throw ShapeError("broadcast_rows: expects a row vector, got " + v.shape().str());
  if (d == 0) throw ShapeError("broadcast_rows: d must be >= 1");
  const Tensor<T>& x = v.value();
  Tensor<T> y(Shape{d, x.cols()});
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < x.cols(); ++j) y(i, j) = x[j];
  const Var<T> ins[] = {v};
  return v.tape()->record("broadcast_rows", std::move(y), ins, [iv = v.id()](Tape<T>& t, std::size_t out) {
    const Tensor<T>& g = t.upstream(out);
    Tensor<T>& acc = t.accumulator(iv);
    for (std::size_t i = 0; i < g.rows(); ++i)
      for (std::size_t j = 0; j < g.cols(); ++j) acc[j] += g(i, j);
  });
}

template <typename T>
Var<T> diag_scale_cols(const Var<T>& x, const Var<T>& g) {
  require_same_tape("diag_scale_cols", x, g);
  const Tensor<T>& v = x.value();
  if (g.value().numel() != v.cols() || (g.shape().rows != 1 && g.shape().cols != 1))
    throw ShapeError("diag_scale_cols: scale vector " + g.shape().str() + " does not match " + v.shape().str());
  Tensor<T> y = v;
  for (std::size_t i = 0; i < v.rows(); ++i)
    for (std::size_t j = 0; j < v.cols(); ++j) y(i, j) *= g.value()[j];
  const Var<T> ins[] = {x, g};
  return x.tape()->record("diag_scale_cols", std::move(y), ins,
                          [ix = x.id(), ig = g.id()](Tape<T>& t, std::size_t out) {
                            const Tensor<T>& up = t.upstream(out);
                            const Tensor<T>& v = t.value(ix);
                            const Tensor<T>& s = t.value(ig);
                            if (t.tracked(ix)) {
                              Tensor<T>& acc = t.accumulator(ix);
                              for (std::size_t i = 0; i < v.rows(); ++i)
                                for (std::size_t j = 0; j < v.cols(); ++j) acc(i, j) += up(i, j) * s[j];
                            }
                            if (t.tracked(ig)) {
                              Tensor<T>& acc = t.accumulator(ig);
                              for (std::size_t j = 0; j < v.cols(); ++j) {
                                T sum = 0;
                                for (std::size_t i = 0; i < v.rows(); ++i) sum += up(i, j) * v(i, j);
                                acc[j] += sum;
                              }
                            }
                          });
}

template <typename T>
Var<T> column_mean(const Var<T>& x) {
  const Tensor<T>& v = x.value();
  const T inv = T(1) / static_cast<T>(v.rows());
  Tensor<T> y(Shape{1, v.cols()});
  for (std::size_t i = 0; i < v.rows(); ++i)
    for (std::size_t j = 0; j < v.cols(); ++j) y[j] += v(i, j);
  for (auto& m : y.storage()) m *= inv;
  const Var<T> ins[] = {x};
  return x.tape()->record("column_mean", std::move(y), ins, [ix = x.id(), inv](Tape<T>& t, std::size_t out) {
    const Tensor<T>& g = t.upstream(out);
    Tensor<T>& acc = t.accumulator(ix);
    for (std::size_t i = 0; i < acc.rows(); ++i)
      for (std::size_t j = 0; j < acc.cols(); ++j) acc(i, j) += g[j] * inv;
  });
}

template <typename T>
Var<T> column_std(const Var<T>& x, T eps) {
  const Tensor<T>& v = x.value();
  const std::size_t d = v.rows(), n = v.cols();
  const T inv = T(1) / static_cast<T>(d);
  Tensor<T> mu(Shape{1, n});
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < n; ++j) mu[j] += v(i, j);
  for (auto& m : mu.storage()) m *= inv;
  Tensor<T> y(Shape{1, n});
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const T c = v(i, j) - mu[j];
      y[j] += c * c;
    }
  for (auto& s : y.storage()) s = std::sqrt(s * inv + eps);
  const Var<T> ins[] = {x};
  return x.tape()->record("column_std", std::move(y), ins,
                          [ix = x.id(), inv, mu = std::move(mu)](Tape<T>& t, std::size_t out) {
                            const Tensor<T>& g = t.upstream(out);
                            const Tensor<T>& sigma = t.value(out);
                            const Tensor<T>& v = t.value(ix);
                            Tensor<T>& acc = t.accumulator(ix);
                            for (std::size_t i = 0; i < v.rows(); ++i)
                              for (std::size_t j = 0; j < v.cols(); ++j)
                                acc(i, j) += g[j] * (v(i, j) - mu[j]) * inv / sigma[j];
                          });
}

template <typename T>
Var<T> col_sum(const Var<T>& x) {
  const Tensor<T>& v = x.value();
  Tensor<T> y(Shape{1, v.cols()});
  for (std::size_t i = 0; i < v.rows(); ++i)
    for (std::size_t j = 0; j < v.cols(); ++j) y[j] += v(i, j);
  const Var<T> ins[] = {x};
  return x.tape()->record("col_sum", std::move(y), ins, [ix = x.id()](Tape<T>& t, std::size_t out) {
    const Tensor<T>& g = t.upstream(out);
    Tensor<T>& acc = t.accumulator(ix);
    for (std::size_t i = 0; i < acc.rows(); ++i)
      for (std::size_t j = 0; j < acc.cols(); ++j) acc(i, j) += g[j];
  });
}

template <typename T>
Var<T> concat_cols(std::span<const Var<T>> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const std::size_t rows = parts[0].shape().rows;
  std::size_t cols = 0;
  for (const auto& p : parts) {
    require_same_tape("concat_cols", parts[0], p);
    if (p.shape().rows != rows) throw ShapeError("concat_cols: row counts disagree");
    cols += p.shape().cols;
  }
  Tensor<T> y(Shape{rows, cols});
  std::vector<std::size_t> ids, offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    const Tensor<T>& v = p.value();
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < v.cols(); ++j) y(i, off + j) = v(i, j);
    ids.push_back(p.id());
    offsets.push_back(off);
    off += v.cols();
  }
  return parts[0].tape()->record("concat_cols", std::move(y), parts,
                                 [ids, offsets](Tape<T>& t, std::size_t out) {
                                   const Tensor<T>& g = t.upstream(out);
                                   for (std::size_t k = 0; k < ids.size(); ++k) {
                                     if (!t.tracked(ids[k])) continue;
                                     Tensor<T>& acc = t.accumulator(ids[k]);
                                     for (std::size_t i = 0; i < acc.rows(); ++i)
                                       for (std::size_t j = 0; j < acc.cols(); ++j) acc(i, j) += g(i, offsets[k] + j);
                                   }
                                 });
}

template <typename T>
Var<T> concat_rows(std::span<const Var<T>> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const std::size_t cols = parts[0].shape().cols;
  std::size_t rows = 0;
  for (const auto& p : parts) {
    require_same_tape("concat_rows", parts[0], p);
    if (p.shape().cols != cols) throw ShapeError("concat_rows: column counts disagree");
    rows += p.shape().rows;
  }
  std::vector<T> data;
  data.reserve(rows * cols);
  std::vector<std::size_t> ids;
  for (const auto& p : parts) {
    const auto src = p.value().data();
    data.insert(data.end(), src.begin(), src.end());
    ids.push_back(p.id());
  }
  return parts[0].tape()->record("concat_rows", Tensor<T>(Shape{rows, cols}, std::move(data)), parts,
                                 [ids](Tape<T>& t, std::size_t out) {
                                   const Tensor<T>& g = t.upstream(out);
                                   std::size_t off = 0;
                                   for (std::size_t id : ids) {
                                     const std::size_t n = t.value(id).numel();
                                     if (t.tracked(id)) {
                                       Tensor<T>& acc = t.accumulator(id);
                                       for (std::size_t i = 0; i < n; ++i) acc[i] += g[off + i];
                                     }
                                     off += n;
                                   }
                                 });
}

template <typename T>
Var<T> slice_row(const Var<T>& x, std::size_t row) {
  const Tensor<T>& v = x.value();
  if (row >= v.rows()) throw ShapeError("slice_row: row out of range");
  Tensor<T> y(Shape{1, v.cols()});
  for (std::size_t j = 0; j < v.cols(); ++j) y[j] = v(row, j);
  const Var<T> ins[] = {x};
  return x.tape()->record("slice_row", std::move(y), ins, [ix = x.id(), row](Tape<T>& t, std::size_t out) {
    const Tensor<T>& g = t.upstream(out);
    Tensor<T>& acc = t.accumulator(ix);
    for (std::size_t j = 0; j < g.cols(); ++j) acc(row, j) += g[j];
  });
}

template <typename T>
Var<T> add_n(std::span<const Var<T>> parts) {
  if (parts.empty()) throw ShapeError("add_n: no inputs");
  Tensor<T> y = parts[0].value();
  std::vector<std::size_t> ids{parts[0].id()};
  for (std::size_t k = 1; k < parts.size(); ++k) {
    require_same_tape("add_n", parts[0], parts[k]);
    require_same("add_n", y, parts[k].value());
    for (std::size_t i = 0; i < y.numel(); ++i) y[i] += parts[k].value()[i];
    ids.push_back(parts[k].id());
  }
  return parts[0].tape()->record("add_n", std::move(y), parts, [ids](Tape<T>& t, std::size_t out) {
    const Tensor<T>& g = t.upstream(out);
    for (std::size_t id : ids) {
      if (!t.tracked(id)) continue;
      Tensor<T>& acc = t.accumulator(id);
      for (std::size_t i = 0; i < g.numel(); ++i) acc[i] += g[i];
    }
  });
}

template <typename T>
Var<T> gated_sum(std::span<const Var<T>> parts, const Var<T>& gates, std::size_t column) {
  if (parts.empty()) throw ShapeError("gated_sum: no inputs");
  const Tensor<T>& G = gates.value();
  if (G.rows() != parts.size() || column >= G.cols())
    throw ShapeError("gated_sum: gate matrix " + G.shape().str() + " does not cover " +
                     std::to_string(parts.size()) + " inputs");
  Tensor<T> y(parts[0].shape());
  std::vector<Var<T>> ins(parts.begin(), parts.end());
  std::vector<std::size_t> ids;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    require_same_tape("gated_sum", gates, parts[k]);
    require_same("gated_sum", y, parts[k].value());
    const T w = G(k, column);
    const Tensor<T>& x = parts[k].value();
    for (std::size_t i = 0; i < y.numel(); ++i) y[i] += w * x[i];
    ids.push_back(parts[k].id());
  }
  ins.push_back(gates);
  return gates.tape()->record("gated_sum", std::move(y), ins,
                              [ids, ig = gates.id(), column](Tape<T>& t, std::size_t out) {
                                const Tensor<T>& g = t.upstream(out);
                                const Tensor<T>& G = t.value(ig);
                                for (std::size_t k = 0; k < ids.size(); ++k) {
                                  const Tensor<T>& x = t.value(ids[k]);
                                  if (t.tracked(ids[k])) {
                                    Tensor<T>& acc = t.accumulator(ids[k]);
                                    const T w = G(k, column);
                                    for (std::size_t i = 0; i < g.numel(); ++i) acc[i] += w * g[i];
                                  }
                                  if (t.tracked(ig)) {
                                    T s = 0;
                                    for (std::size_t i = 0; i < g.numel(); ++i) s += g[i] * x[i];
                                    t.accumulator(ig)(k, column) += s;
                                  }
                                }
                              });
}

template <typename T>
Var<T> sum_all(const Var<T>& x) {
  T s = 0;
  for (T v : x.value().data()) s += v;
  const Var<T> ins[] = {x};
  return x.tape()->record("sum_all", Tensor<T>(Shape{1, 1}, s), ins, [ix = x.id()](Tape<T>& t, std::size_t out) {
    const T g = t.upstream(out)[0];
    Tensor<T>& acc = t.accumulator(ix);
    for (auto& a : acc.storage()) a += g;
  });
}

template <typename T>
Var<T> mean_all(const Var<T>& x) {
  const T inv = T(1) / static_cast<T>(x.value().numel());
  T s = 0;
  for (T v : x.value().data()) s += v;
  const Var<T> ins[] = {x};
  return x.tape()->record("mean_all", Tensor<T>(Shape{1, 1}, s * inv), ins,
                          [ix = x.id(), inv](Tape<T>& t, std::size_t out) {
                            const T g = t.upstream(out)[0] * inv;
                            Tensor<T>& acc = t.accumulator(ix);
                            for (auto& a : acc.storage()) a += g;
                          });
}

template <typename T>
Var<T> bce_with_logits(const Var<T>& logits, const Tensor<T>& labels) {
  const Tensor<T>& z = logits.value();
  if (z.shape() != labels.shape())
    throw ShapeError("bce_with_logits: logits " + z.shape().str() + " vs labels " + labels.shape().str());
  for (T l : labels.data())
    if (!(l >= T(0) && l <= T(1))) throw std::invalid_argument("bce_with_logits: label outside [0, 1]");
  const T inv = T(1) / static_cast<T>(z.numel());
  T loss = 0;
  for (std::size_t i = 0; i < z.numel(); ++i)
    loss += std::max(z[i], T(0)) - z[i] * labels[i] + std::log1p(std::exp(-std::abs(z[i])));
  const Var<T> ins[] = {logits};
  return logits.tape()->record("bce_with_logits", Tensor<T>(Shape{1, 1}, loss * inv), ins,
                               [iz = logits.id(), labels, inv](Tape<T>& t, std::size_t out) {
                                 const T g = t.upstream(out)[0] * inv;
                                 const Tensor<T>& z = t.value(iz);
                                 Tensor<T>& acc = t.accumulator(iz);
                                 for (std::size_t i = 0; i < z.numel(); ++i)
                                   acc[i] += g * (stable_sigmoid(z[i]) - labels[i]);
                               });
}

template <typename T>
Var<T> equivariant_mixer(const Var<T>& w, std::size_t n) {
  if (w.shape() != Shape{2, 1}) throw ShapeError("equivariant_mixer: weight must be 2x1, got " + w.shape().str());
  if (n == 0) throw ShapeError("equivariant_mixer: n must be >= 1");
  const T self = w.value()[0];
  const T shared = w.value()[1] / static_cast<T>(n);
  Tensor<T> y(Shape{n, n}, shared);
  for (std::size_t i = 0; i < n; ++i) y(i, i) += self;
  const Var<T> ins[] = {w};
  return w.tape()->record("equivariant_mixer", std::move(y), ins, [iw = w.id(), n](Tape<T>& t, std::size_t out) {
    const Tensor<T>& g = t.upstream(out);
    T diag = 0, all = 0;
    for (std::size_t i = 0; i < n; ++i) diag += g(i, i);
    for (T v : g.data()) all += v;
    Tensor<T>& acc = t.accumulator(iw);
    acc[0] += diag;
    acc[1] += all / static_cast<T>(n);
  });
}

// ---------------------------------------------------------------------------

#define SUPER_INSTANTIATE(T)                                                                  \
  template class Tape<T>;                                                                     \
  template Tensor<T> matmul_values(const Tensor<T>&, const Tensor<T>&);                       \
  template Var<T> matmul(const Var<T>&, const Var<T>&);                                       \
  template Var<T> transpose(const Var<T>&);                                                   \
  template Var<T> add(const Var<T>&, const Var<T>&);                                          \
  template Var<T> sub(const Var<T>&, const Var<T>&);                                          \
  template Var<T> mul(const Var<T>&, const Var<T>&);                                          \
  template Var<T> div(const Var<T>&, const Var<T>&);                                          \
  template Var<T> affine(const Var<T>&, T, T);                                                \
  template Var<T> scale_by(const Var<T>&, const Var<T>&);                                     \
  template Var<T> sigmoid(const Var<T>&);                                                     \
  template Var<T> softmax(const Var<T>&, int);                                                \
  template Var<T> squash_rate_cols(const Var<T>&);                                            \
  template Var<T> avg_pool_cols(const Var<T>&);                                               \
  template Var<T> broadcast_cols(const Var<T>&, std::size_t);                                 \
  template Var<T> broadcast_rows(const Var<T>&, std::size_t);                                 \
  template Var<T> diag_scale_cols(const Var<T>&, const Var<T>&);                              \
  template Var<T> column_mean(const Var<T>&);                                                 \
  template Var<T> column_std(const Var<T>&, T);                                               \
  template Var<T> col_sum(const Var<T>&);                                                     \
  template Var<T> concat_cols(std::span<const Var<T>>);                                       \
  template Var<T> concat_rows(std::span<const Var<T>>);                                       \
  template Var<T> slice_row(const Var<T>&, std::size_t);                                      \
  template Var<T> add_n(std::span<const Var<T>>);                                             \
  template Var<T> gated_sum(std::span<const Var<T>>, const Var<T>&, std::size_t);             \
  template Var<T> sum_all(const Var<T>&);                                                     \
  template Var<T> mean_all(const Var<T>&);                                                    \
  template Var<T> bce_with_logits(const Var<T>&, const Tensor<T>&);                           \
  template Var<T> equivariant_mixer(const Var<T>&, std::size_t);

SUPER_INSTANTIATE(float)
SUPER_INSTANTIATE(double)

#undef SUPER_INSTANTIATE

}  // namespace super
