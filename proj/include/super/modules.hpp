// SPDX-License-Identifier: Apache-2.0
//
// The five specialized capsule modulators. Each maps a d x N capsule matrix to
// a d x N capsule matrix and commutes with any permutation of the N columns.

#pragma once

#include <optional>

#include "super/autodiff.hpp"
#include "super/config.hpp"
#include "super/params.hpp"

namespace super {

/// Column-wise standardization epsilon, LayerNorm convention.
inline constexpr double kNormEpsilon = 1e-5;

/// R1. D = (W1 V)^T (W2 V); g_v = sigmoid(W3 * colsum(D)); output column i is
/// sum_j softmax_row(D)[i, j] * g_v[j] * V[:, j]. W3 is a 2 x 1 weight expanded
/// to w0 * I + (w1 / N) * ones so the module stays permutation-equivariant.
template <typename T>
Var<T> focal_context(const Var<T>& V, const Var<T>& W1, const Var<T>& W2, const Var<T>& W3);

/// R2. Returns its input unchanged (same tape node).
template <typename T>
Var<T> identity_module(const Var<T>& V) {
  return V;
}

/// (V - mu) / sigma per column, sigma = sqrt(population var + eps).
template <typename T>
Var<T> standardize_columns(const Var<T>& V);

/// R3. FiLM-style modulation from the pooled question:
/// a = sigmoid(W_a qbar + b_a), eta = sigmoid(W_eta qbar + b_eta), both
/// broadcast over capsules; output = a * standardize(V) + eta.
template <typename T>
Var<T> global_reduction(const Var<T>& V, const Var<T>& Q, const Var<T>& W_a, const Var<T>& W_eta,
                        const Var<T>& b_a, const Var<T>& b_eta);

/// R4. Per-capsule question context Q_v = Q softmax_words((W4 Q)^T (W5 V)),
/// then a' = sigmoid(W_a' Q_v + b_a'), eta' likewise;
/// output = a' * standardize(V) + eta'.
template <typename T>
Var<T> local_semantic(const Var<T>& V, const Var<T>& Q, const Var<T>& W4, const Var<T>& W5, const Var<T>& W_a,
                      const Var<T>& W_eta, const Var<T>& b_a, const Var<T>& b_eta);

/// R5. K_v = K softmax_facts((W6 K)^T (W7 V)); g_k = sigmoid(W8 V - W9 K_v);
/// output = g_k * K_v + (1 - g_k) * V.
template <typename T>
Var<T> knowledge_augment(const Var<T>& V, const Var<T>& K, const Var<T>& W6, const Var<T>& W7, const Var<T>& W8,
                         const Var<T>& W9);

/// Inputs shared by every module within one layer step.
template <typename T>
struct ModuleContext {
  const BoundParams<T>* params = nullptr;
  Var<T> Q;
  std::optional<Var<T>> K;
};

/// Applies module `m` (1..5) with its auxiliary input (none, Q or K).
/// Throws std::invalid_argument for m outside 1..5 or m = 5 without K.
template <typename T>
Var<T> dispatch(int m, const Var<T>& V, const ModuleContext<T>& ctx);

/// Canonical parameter names and shapes of one module.
std::vector<std::pair<std::string, Shape>> module_parameter_shapes(ModuleKind kind, const Dims& dims);

}  // namespace super
