// SPDX-License-Identifier: Apache-2.0

#include "super/features.hpp"

namespace super {

template <typename T>
Var<T> project_features(const Var<T>& F, const Var<T>& W_proj) {
  if (W_proj.shape().cols != F.shape().rows)
    throw ShapeError("project_features: W_proj " + W_proj.shape().str() + " vs F " + F.shape().str());
  return matmul(W_proj, F);
}

template <typename T>
Var<T> regulate_question(const Var<T>& Qhat, const Var<T>& W_Qhat) {
  if (W_Qhat.shape() != Shape{1, Qhat.shape().rows})
    throw ShapeError("regulate_question: W_Qhat " + W_Qhat.shape().str() + " vs Qhat " + Qhat.shape().str());
  const Var<T> attention = softmax(matmul(W_Qhat, Qhat), 1);
  return diag_scale_cols(Qhat, attention);
}

template <typename T>
Var<T> project_knowledge(const Var<T>& K_raw, const Var<T>& W_k) {
  if (W_k.shape().cols != K_raw.shape().rows)
    throw ShapeError("project_knowledge: W_k " + W_k.shape().str() + " vs K_raw " + K_raw.shape().str());
  return matmul(W_k, K_raw);
}

template <typename T>
Encoded<T> encode(Tape<T>& tape, const BoundParams<T>& params, const Instance& instance, bool with_knowledge) {
  Encoded<T> out;
  out.V = project_features(tape.constant(instance.F.cast<T>()), params["proj.W_proj"]);
  out.Q = regulate_question(tape.constant(instance.Qhat.cast<T>()), params["proj.W_Qhat"]);
  if (with_knowledge) out.K = project_knowledge(tape.constant(instance.Kraw.cast<T>()), params["proj.W_k"]);
  return out;
}

#define SUPER_INSTANTIATE(T)                                                          \
  template Var<T> project_features(const Var<T>&, const Var<T>&);                     \
  template Var<T> regulate_question(const Var<T>&, const Var<T>&);                    \
  template Var<T> project_knowledge(const Var<T>&, const Var<T>&);                    \
  template Encoded<T> encode(Tape<T>&, const BoundParams<T>&, const Instance&, bool);

SUPER_INSTANTIATE(float)
SUPER_INSTANTIATE(double)

#undef SUPER_INSTANTIATE

}  // namespace super
