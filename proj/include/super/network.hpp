// SPDX-License-Identifier: Apache-2.0
//
// The full iterated network, the answer head, loss/metric helpers and route
// traces.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "super/config.hpp"
#include "super/data.hpp"
#include "super/features.hpp"
#include "super/layer.hpp"
#include "super/params.hpp"

namespace super {

/// Structural description of a model, derived from a RunConfig.
struct ModelSpec {
  Dims dims;
  std::size_t T = 8;
  std::vector<int> kinds;  // active module numbers, ascending
  AblationConfig ablation;

  std::size_t M() const { return kinds.size(); }
  bool uses_knowledge() const;
};

ModelSpec model_spec(const RunConfig& cfg);

/// Canonical (name, shape) list, in storage order. Parts switched off by the
/// ablation contribute no tensors.
std::vector<std::pair<std::string, Shape>> parameter_shapes(const ModelSpec& spec);

/// Gaussian init with std init_scale / sqrt(fan_in); biases and the 2 x 1
/// R1 mixer start at zero. Each tensor draws from a stream keyed by its name,
/// so shared tensors initialize identically across ablations.
ParamStore<float> init_params(const ModelSpec& spec, std::uint64_t seed, double init_scale);

struct RouteTrace {
  std::vector<StepRecord> iterations;
  std::vector<double> path_vector;  // all G, row-major, concatenated over iterations
};

/// Flattens the per-iteration gate matrices into a length M*M*T vector.
std::vector<double> path_vector(const std::vector<StepRecord>& iterations);

template <typename T>
struct NetworkResult {
  Var<T> U;       // d x N after T iterations
  Var<T> logits;  // A x 1
  RouteTrace trace;
};

/// Initial state: U = broadcast(mean_cols(Q)), V_m = V, b = 0, H = 0.
template <typename T>
LayerState<T> initial_state(const Var<T>& V, const Var<T>& Q, std::size_t M);

/// Runs T shared-parameter iterations on an encoded instance and applies the
/// head. `gate_seed` only matters for the random router.
template <typename T>
NetworkResult<T> run_network(const Encoded<T>& encoded, const BoundParams<T>& params, const ModelSpec& spec,
                             std::uint64_t gate_seed);

/// W_y (W_u_head mean_cols(U) + W_q_head mean_cols(Q)); A x 1 pre-sigmoid.
template <typename T>
Var<T> head_logits(const Var<T>& U, const Var<T>& Q, const Var<T>& W_y, const Var<T>& W_u, const Var<T>& W_q);

/// sigmoid(head_logits(...)).
template <typename T>
Var<T> predict(const Var<T>& U, const Var<T>& Q, const Var<T>& W_y, const Var<T>& W_u, const Var<T>& W_q);

/// Mean binary cross-entropy over answers, from logits.
template <typename T>
Var<T> bce_loss(const Var<T>& logits, const Tensor<T>& labels);

/// min(1, count / 3). Throws std::invalid_argument for a negative count.
double vqa_accuracy(int human_count);

/// mask[t][m][m*] = G_t(m, m*) > threshold.
using PathMask = std::vector<std::vector<std::vector<bool>>>;
PathMask discretize_paths(const RouteTrace& trace, double threshold = 0.6);

/// Gate seed of one instance under the random router.
std::uint64_t instance_gate_seed(std::uint64_t router_seed, const Instance& instance);

/// Encode, run and score one instance on a fresh tape.
template <typename T>
struct Forward {
  Var<T> logits;
  Var<T> loss;
  RouteTrace trace;
};

template <typename T>
Forward<T> forward(Tape<T>& tape, const BoundParams<T>& params, const ModelSpec& spec, const Instance& instance,
                   std::uint64_t router_seed);

/// Index of the largest logit; ties resolve to the lowest index.
template <typename T>
std::size_t argmax(const Tensor<T>& v);

}  // namespace super
