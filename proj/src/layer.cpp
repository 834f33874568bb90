// SPDX-License-Identifier: Apache-2.0

#include "super/layer.hpp"

#include <stdexcept>
#include <string>

#include "super/io.hpp"

namespace super {

template <typename T>
Var<T> route_gates(const Var<T>& V_m, const Var<T>& W_g) {
  if (W_g.shape().cols != V_m.shape().rows)
    throw ShapeError("route_gates: W_g " + W_g.shape().str() + " vs V " + V_m.shape().str());
  return sigmoid(matmul(W_g, avg_pool_cols(V_m)));
}

template <typename T>
std::vector<Var<T>> dispatch_and_aggregate(const std::vector<Var<T>>& outputs, const Var<T>& G) {
  const std::size_t M = outputs.size();
  if (G.shape() != Shape{M, M})
    throw ShapeError("dispatch_and_aggregate: gates " + G.shape().str() + " for " + std::to_string(M) + " modules");
  std::vector<Var<T>> next;
  next.reserve(M);
  for (std::size_t m = 0; m < M; ++m) next.push_back(gated_sum<T>(outputs, G, m));
  return next;
}

template <typename T>
Agreement<T> gating_agreements(const std::vector<Var<T>>& V, const Var<T>& U_prev, const Var<T>& b_prev) {
  const std::size_t M = V.size();
  if (b_prev.shape() != Shape{M, U_prev.shape().cols})
    throw ShapeError("gating_agreements: b " + b_prev.shape().str() + " vs " + std::to_string(M) + " modules");
  std::vector<Var<T>> rows;
  rows.reserve(M);
  for (std::size_t m = 0; m < M; ++m)
    rows.push_back(add(slice_row(b_prev, m), squash_rate_cols(mul(V[m], U_prev))));
  Agreement<T> out;
  out.b = concat_rows<T>(rows);
  out.c = softmax(out.b, 1);
  std::vector<Var<T>> parts;
  parts.reserve(M);
  for (std::size_t m = 0; m < M; ++m) parts.push_back(diag_scale_cols(V[m], slice_row(out.c, m)));
  out.H = add_n<T>(parts);
  return out;
}

template <typename T>
Var<T> uniform_aggregate(const std::vector<Var<T>>& V) {
  return affine(add_n<T>(V), T(1) / static_cast<T>(V.size()), T(0));
}

template <typename T>
Var<T> memory_reactivate(const Var<T>& H, const Var<T>& U_prev, const Var<T>& W_z, const Var<T>& W_h,
                         const Var<T>& W_u, const Var<T>& W_r) {
  const Var<T> delta = sub(H, U_prev);
  const Var<T> z_u = sigmoid(matmul(W_u, delta));
  const Var<T> z_r = sigmoid(matmul(W_r, delta));
  const Var<T> candidate = add(matmul(W_z, mul(z_r, U_prev)), matmul(W_h, H));
  return add(mul(affine(z_u, T(-1), T(1)), U_prev), mul(z_u, candidate));
}

double open_unit(std::uint64_t bits) {
  // 52 high bits, offset by half a step; both ends stay representable, so
  // the result is never 0 and never 1.
  return (static_cast<double>(bits >> 12) + 0.5) * 0x1.0p-52;
}

Tensor<double> fixed_gates(RouterMode mode, std::size_t M, std::uint64_t seed, std::size_t iteration) {
  Tensor<double> G(Shape{M, M}, 1.0);
  if (mode == RouterMode::Random) {
    const std::uint64_t base = derive_seed(seed, iteration);
    for (std::size_t i = 0; i < M * M; ++i) G[i] = open_unit(derive_seed(base, i));
  } else if (mode != RouterMode::None) {
    throw std::logic_error("fixed_gates: learned router has no fixed gates");
  }
  return G;
}

std::string router_param_name(int kind) { return "layer.W_g." + std::to_string(kind); }

template <typename T>
LayerState<T> super_layer_step(const LayerState<T>& state, const LayerContext<T>& ctx, std::size_t iteration,
                               StepRecord* record) {
  const std::size_t M = ctx.kinds.size();
  if (state.V.size() != M) throw ShapeError("super_layer_step: state holds a different module count");
  Tape<T>& tape = *state.U.tape();

  // Gates from the inputs of the previous iteration, before modulation.
  Var<T> G;
  if (ctx.ablation.router == RouterMode::Learned) {
    std::vector<Var<T>> rows;
    rows.reserve(M);
    for (std::size_t i = 0; i < M; ++i)
      rows.push_back(transpose(route_gates(state.V[i], (*ctx.modules.params)[router_param_name(ctx.kinds[i])])));
    G = concat_rows<T>(rows);
  } else {
    G = tape.constant(fixed_gates(ctx.ablation.router, M, ctx.gate_seed, iteration).template cast<T>());
  }

  std::vector<Var<T>> outputs;
  outputs.reserve(M);
  for (std::size_t i = 0; i < M; ++i) outputs.push_back(dispatch(ctx.kinds[i], state.V[i], ctx.modules));

  LayerState<T> next;
  next.V = dispatch_and_aggregate(outputs, G);

  Var<T> c;
  if (ctx.ablation.agreements_enabled) {
    Agreement<T> agreement = gating_agreements(next.V, state.U, state.b);
    next.H = agreement.H;
    next.b = agreement.b;
    c = agreement.c;
  } else {
    next.H = uniform_aggregate(next.V);
    next.b = state.b;
    // Effective per-capsule weight of each module in H.
    c = tape.constant(Tensor<T>(state.b.shape(), T(1) / static_cast<T>(M)));
  }

  if (ctx.ablation.memory_enabled) {
    const BoundParams<T>& p = *ctx.modules.params;
    next.U = memory_reactivate(next.H, state.U, p["mem.W_z"], p["mem.W_h"], p["mem.W_u"], p["mem.W_r"]);
  } else {
    next.U = next.H;
  }

  if (record) {
    record->G = G.value().template cast<double>();
    record->c = c.value().template cast<double>();
    record->b = next.b.value().template cast<double>();
  }
  return next;
}

#define SUPER_INSTANTIATE(T)                                                                                  \
  template Var<T> route_gates(const Var<T>&, const Var<T>&);                                                  \
  template std::vector<Var<T>> dispatch_and_aggregate(const std::vector<Var<T>>&, const Var<T>&);             \
  template Agreement<T> gating_agreements(const std::vector<Var<T>>&, const Var<T>&, const Var<T>&);          \
  template Var<T> uniform_aggregate(const std::vector<Var<T>>&);                                              \
  template Var<T> memory_reactivate(const Var<T>&, const Var<T>&, const Var<T>&, const Var<T>&, const Var<T>&, \
                                    const Var<T>&);                                                           \
  template LayerState<T> super_layer_step(const LayerState<T>&, const LayerContext<T>&, std::size_t, StepRecord*);

SUPER_INSTANTIATE(float)
SUPER_INSTANTIATE(double)

#undef SUPER_INSTANTIATE

}  // namespace super
