// SPDX-License-Identifier: Apache-2.0
//
// Feature representation: visual projection, word-level question attention and
// knowledge projection into the shared capsule width d.

#pragma once

#include <optional>

#include "super/autodiff.hpp"
#include "super/data.hpp"
#include "super/params.hpp"

namespace super {

/// V = W_proj * F  (d x d_v times d_v x N).
template <typename T>
Var<T> project_features(const Var<T>& F, const Var<T>& W_proj);

/// Q = Qhat * diag(softmax(W_Qhat * Qhat)), softmax over the L words.
template <typename T>
Var<T> regulate_question(const Var<T>& Qhat, const Var<T>& W_Qhat);

/// K = W_k * K_raw  (d x d_k times d_k x K).
template <typename T>
Var<T> project_knowledge(const Var<T>& K_raw, const Var<T>& W_k);

template <typename T>
struct Encoded {
  Var<T> V;                // d x N
  Var<T> Q;                // d x L
  std::optional<Var<T>> K; // d x K, present in knowledge mode
};

/// Registers the instance on the tape and applies the three projections using
/// "proj.W_proj", "proj.W_Qhat" and (with knowledge) "proj.W_k".
template <typename T>
Encoded<T> encode(Tape<T>& tape, const BoundParams<T>& params, const Instance& instance, bool with_knowledge);

}  // namespace super
