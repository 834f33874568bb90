// SPDX-License-Identifier: Apache-2.0
//
// One routing iteration: gates from the pooled per-module inputs, gated
// aggregation of module outputs, agreement coupling into H, then the gated
// memory update of U.

#pragma once

#include <cstdint>
#include <vector>

#include "super/autodiff.hpp"
#include "super/config.hpp"
#include "super/modules.hpp"
#include "super/params.hpp"

namespace super {

/// State carried between iterations. V[i] belongs to the i-th active module.
template <typename T>
struct LayerState {
  std::vector<Var<T>> V;  // M entries, each d x N
  Var<T> U;               // d x N memory
  Var<T> b;               // M x N agreement logits
  Var<T> H;               // d x N overlying capsules
};

/// Values observed during one iteration, detached from the tape.
struct StepRecord {
  Tensor<double> G;  // M x M, row = emitting module, column = receiving module
  Tensor<double> c;  // M x N coupling coefficients
  Tensor<double> b;  // M x N agreement logits after the update
};

/// G_m = sigmoid(W_g * mean_cols(V_m)); M x 1, entry j is the gate towards
/// the j-th active module.
template <typename T>
Var<T> route_gates(const Var<T>& V_m, const Var<T>& W_g);

/// V_m_new = sum_k G(k, m) * outputs[k] for every receiving module m.
template <typename T>
std::vector<Var<T>> dispatch_and_aggregate(const std::vector<Var<T>>& outputs, const Var<T>& G);

template <typename T>
struct Agreement {
  Var<T> H;  // d x N
  Var<T> b;  // M x N
  Var<T> c;  // M x N
};

/// b_new[m] = b_prev[m] + squash_rate(V_m * U_prev) per column;
/// c = row softmax of b_new; H = sum_m V_m diag(c_m).
template <typename T>
Agreement<T> gating_agreements(const std::vector<Var<T>>& V, const Var<T>& U_prev, const Var<T>& b_prev);

/// Uniform replacement used when agreements are ablated: H = mean_m V_m.
template <typename T>
Var<T> uniform_aggregate(const std::vector<Var<T>>& V);

/// z_u = sigmoid(W_u (H - U)), z_r = sigmoid(W_r (H - U)),
/// U* = W_z (z_r * U) + W_h H, U_new = (1 - z_u) * U + z_u * U*.
template <typename T>
Var<T> memory_reactivate(const Var<T>& H, const Var<T>& U_prev, const Var<T>& W_z, const Var<T>& W_h,
                         const Var<T>& W_u, const Var<T>& W_r);

/// Uniform draw in the open interval (0, 1) from a 64-bit word.
double open_unit(std::uint64_t bits);

/// M x M gates for router modes that bypass W_g: uniform(0, 1) draws keyed by
/// (seed, iteration) for Random, exactly 1 for None.
Tensor<double> fixed_gates(RouterMode mode, std::size_t M, std::uint64_t seed, std::size_t iteration);

/// Everything a step needs besides the state.
template <typename T>
struct LayerContext {
  ModuleContext<T> modules;
  std::vector<int> kinds;  // active module numbers, ascending
  AblationConfig ablation;
  std::uint64_t gate_seed = 0;  // keyed per instance for the random router
};

/// Router, dispatch/aggregate, agreements and memory, in that order.
/// `iteration` is 1-based. Appends the iteration's record to `record`.
template <typename T>
LayerState<T> super_layer_step(const LayerState<T>& state, const LayerContext<T>& ctx, std::size_t iteration,
                               StepRecord* record);

/// Canonical router parameter name for a module number.
std::string router_param_name(int kind);

}  // namespace super
