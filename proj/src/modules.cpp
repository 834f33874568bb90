// SPDX-License-Identifier: Apache-2.0

#include "super/modules.hpp"

#include <stdexcept>
#include <string>

namespace super {

namespace {

template <typename T>
void require_capsules(const char* op, const Var<T>& V, const Var<T>& W) {
  if (W.shape() != Shape{V.shape().rows, V.shape().rows})
    throw ShapeError(std::string(op) + ": weight " + W.shape().str() + " does not match capsule width " +
                     std::to_string(V.shape().rows));
}

template <typename T>
Var<T> add_bias(const Var<T>& X, const Var<T>& b) {
  if (b.shape() != Shape{X.shape().rows, 1})
    throw ShapeError("bias " + b.shape().str() + " does not match " + X.shape().str());
  return add(X, broadcast_cols(b, X.shape().cols));
}

}  // namespace

template <typename T>
Var<T> focal_context(const Var<T>& V, const Var<T>& W1, const Var<T>& W2, const Var<T>& W3) {
  require_capsules("focal_context", V, W1);
  require_capsules("focal_context", V, W2);
  const std::size_t n = V.shape().cols;
  const Var<T> D = matmul(transpose(matmul(W1, V)), matmul(W2, V));  // N x N
  const Var<T> relevance = softmax(D, 1);
  const Var<T> importance = transpose(col_sum(D));                      // N x 1
  const Var<T> g_v = sigmoid(matmul(equivariant_mixer(W3, n), importance));
  return matmul(diag_scale_cols(V, g_v), transpose(relevance));
}

template <typename T>
Var<T> standardize_columns(const Var<T>& V) {
  const std::size_t d = V.shape().rows;
  const auto [mu, sigma] = column_stats(V, static_cast<T>(kNormEpsilon));
  return div(sub(V, broadcast_rows(mu, d)), broadcast_rows(sigma, d));
}

template <typename T>
Var<T> global_reduction(const Var<T>& V, const Var<T>& Q, const Var<T>& W_a, const Var<T>& W_eta,
                        const Var<T>& b_a, const Var<T>& b_eta) {
  require_capsules("global_reduction", V, W_a);
  require_capsules("global_reduction", V, W_eta);
  if (Q.shape().rows != V.shape().rows) throw ShapeError("global_reduction: Q width differs from V");
  const std::size_t n = V.shape().cols;
  const Var<T> qbar = avg_pool_cols(Q);
  // W * broadcast(qbar) == broadcast(W * qbar); the narrow form is cheaper.
  const Var<T> a = broadcast_cols(sigmoid(add(matmul(W_a, qbar), b_a)), n);
  const Var<T> eta = broadcast_cols(sigmoid(add(matmul(W_eta, qbar), b_eta)), n);
  return add(mul(a, standardize_columns(V)), eta);
}

template <typename T>
Var<T> local_semantic(const Var<T>& V, const Var<T>& Q, const Var<T>& W4, const Var<T>& W5, const Var<T>& W_a,
                      const Var<T>& W_eta, const Var<T>& b_a, const Var<T>& b_eta) {
  for (const Var<T>* W : {&W4, &W5, &W_a, &W_eta}) require_capsules("local_semantic", V, *W);
  if (Q.shape().rows != V.shape().rows) throw ShapeError("local_semantic: Q width differs from V");
  const Var<T> scores = matmul(transpose(matmul(W4, Q)), matmul(W5, V));  // L x N
  const Var<T> Q_v = matmul(Q, softmax(scores, 0));                        // d x N
  const Var<T> a = sigmoid(add_bias(matmul(W_a, Q_v), b_a));
  const Var<T> eta = sigmoid(add_bias(matmul(W_eta, Q_v), b_eta));
  return add(mul(a, standardize_columns(V)), eta);
}

template <typename T>
Var<T> knowledge_augment(const Var<T>& V, const Var<T>& K, const Var<T>& W6, const Var<T>& W7, const Var<T>& W8,
                         const Var<T>& W9) {
  for (const Var<T>* W : {&W6, &W7, &W8, &W9}) require_capsules("knowledge_augment", V, *W);
  if (K.shape().rows != V.shape().rows) throw ShapeError("knowledge_augment: K width differs from V");
  const Var<T> affinity = matmul(transpose(matmul(W6, K)), matmul(W7, V));  // K x N
  const Var<T> K_v = matmul(K, softmax(affinity, 0));                          // d x N
  const Var<T> g_k = sigmoid(sub(matmul(W8, V), matmul(W9, K_v)));
  return add(mul(g_k, K_v), mul(affine(g_k, T(-1), T(1)), V));
}

template <typename T>
Var<T> dispatch(int m, const Var<T>& V, const ModuleContext<T>& ctx) {
  const BoundParams<T>& p = *ctx.params;
  switch (m) {
    case 1:
      return focal_context(V, p["R1.W_1"], p["R1.W_2"], p["R1.W_3"]);
    case 2:
      return identity_module(V);
    case 3:
      return global_reduction(V, ctx.Q, p["R3.W_a"], p["R3.W_eta"], p["R3.b_a"], p["R3.b_eta"]);
    case 4:
      return local_semantic(V, ctx.Q, p["R4.W_4"], p["R4.W_5"], p["R4.W_a"], p["R4.W_eta"], p["R4.b_a"],
                            p["R4.b_eta"]);
    case 5:
      if (!ctx.K) throw std::invalid_argument("dispatch: module 5 needs knowledge input, but knowledge is disabled");
      return knowledge_augment(V, *ctx.K, p["R5.W_6"], p["R5.W_7"], p["R5.W_8"], p["R5.W_9"]);
    default:
      throw std::invalid_argument("dispatch: module index " + std::to_string(m) + " outside 1..5");
  }
}

std::vector<std::pair<std::string, Shape>> module_parameter_shapes(ModuleKind kind, const Dims& dims) {
  const Shape sq{dims.d, dims.d};
  const Shape bias{dims.d, 1};
  switch (kind) {
    case ModuleKind::FocalContext:
      return {{"R1.W_1", sq}, {"R1.W_2", sq}, {"R1.W_3", Shape{2, 1}}};
    case ModuleKind::Identity:
      return {};
    case ModuleKind::GlobalReduction:
      return {{"R3.W_a", sq}, {"R3.W_eta", sq}, {"R3.b_a", bias}, {"R3.b_eta", bias}};
    case ModuleKind::LocalSemantic:
      return {{"R4.W_4", sq}, {"R4.W_5", sq}, {"R4.W_a", sq}, {"R4.W_eta", sq}, {"R4.b_a", bias}, {"R4.b_eta", bias}};
    case ModuleKind::KnowledgeAugment:
      return {{"R5.W_6", sq}, {"R5.W_7", sq}, {"R5.W_8", sq}, {"R5.W_9", sq}};
  }
  return {};
}

#define SUPER_INSTANTIATE(T)                                                                                   \
  template Var<T> focal_context(const Var<T>&, const Var<T>&, const Var<T>&, const Var<T>&);                   \
  template Var<T> standardize_columns(const Var<T>&);                                                          \
  template Var<T> global_reduction(const Var<T>&, const Var<T>&, const Var<T>&, const Var<T>&, const Var<T>&,  \
                                   const Var<T>&);                                                             \
  template Var<T> local_semantic(const Var<T>&, const Var<T>&, const Var<T>&, const Var<T>&, const Var<T>&,    \
                                 const Var<T>&, const Var<T>&, const Var<T>&);                                 \
  template Var<T> knowledge_augment(const Var<T>&, const Var<T>&, const Var<T>&, const Var<T>&, const Var<T>&, \
                                    const Var<T>&);                                                            \
  template Var<T> dispatch(int, const Var<T>&, const ModuleContext<T>&);

SUPER_INSTANTIATE(float)
SUPER_INSTANTIATE(double)

#undef SUPER_INSTANTIATE

}  // namespace super
