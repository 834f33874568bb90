// SPDX-License-Identifier: Apache-2.0

#include "super/network.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

#include "super/io.hpp"

namespace super {

bool ModelSpec::uses_knowledge() const { return std::find(kinds.begin(), kinds.end(), 5) != kinds.end(); }

ModelSpec model_spec(const RunConfig& cfg) {
  validate(cfg);
  ModelSpec spec;
  spec.dims = cfg.dims;
  spec.T = cfg.T;
  for (ModuleKind kind : active_modules(cfg)) spec.kinds.push_back(static_cast<int>(kind));
  spec.ablation = cfg.ablation;
  return spec;
}

std::vector<std::pair<std::string, Shape>> parameter_shapes(const ModelSpec& spec) {
  const Dims& d = spec.dims;
  const Shape sq{d.d, d.d};
  std::vector<std::pair<std::string, Shape>> out = {
      {"proj.W_proj", Shape{d.d, d.d_v}},
      {"proj.W_Qhat", Shape{1, d.d}},
  };
  if (spec.uses_knowledge()) out.emplace_back("proj.W_k", Shape{d.d, d.d_k});
  for (int kind : spec.kinds)
    for (auto& entry : module_parameter_shapes(static_cast<ModuleKind>(kind), d)) out.push_back(std::move(entry));
  if (spec.ablation.router == RouterMode::Learned)
    for (int kind : spec.kinds) out.emplace_back(router_param_name(kind), Shape{spec.M(), d.d});
  if (spec.ablation.memory_enabled)
    for (const char* name : {"mem.W_z", "mem.W_h", "mem.W_u", "mem.W_r"}) out.emplace_back(name, sq);
  out.emplace_back("head.W_y", Shape{d.A, d.d});
  out.emplace_back("head.W_u", sq);
  out.emplace_back("head.W_q", sq);
  return out;
}

namespace {

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

bool zero_initialized(const std::string& name) {
  return name == "R1.W_3" || name.find(".b_") != std::string::npos;
}

}  // namespace

ParamStore<float> init_params(const ModelSpec& spec, std::uint64_t seed, double init_scale) {
  ParamStore<float> store;
  for (const auto& [name, shape] : parameter_shapes(spec)) {
    Tensor<float> value(shape);
    if (!zero_initialized(name)) {
      Rng rng(derive_seed(seed, fnv1a(name)));
      std::normal_distribution<double> normal(0.0, init_scale / std::sqrt(static_cast<double>(shape.cols)));
      for (std::size_t i = 0; i < value.numel(); ++i) value[i] = static_cast<float>(normal(rng));
    }
    store.add(name, std::move(value));
  }
  return store;
}

std::vector<double> path_vector(const std::vector<StepRecord>& iterations) {
  std::vector<double> out;
  for (const StepRecord& r : iterations) out.insert(out.end(), r.G.data().begin(), r.G.data().end());
  return out;
}

template <typename T>
LayerState<T> initial_state(const Var<T>& V, const Var<T>& Q, std::size_t M) {
  Tape<T>& tape = *V.tape();
  const std::size_t d = V.shape().rows;
  const std::size_t n = V.shape().cols;
  LayerState<T> s;
  s.V.assign(M, V);
  s.U = broadcast_cols(avg_pool_cols(Q), n);
  s.b = tape.constant(Tensor<T>(Shape{M, n}));
  s.H = tape.constant(Tensor<T>(Shape{d, n}));
  return s;
}

template <typename T>
Var<T> head_logits(const Var<T>& U, const Var<T>& Q, const Var<T>& W_y, const Var<T>& W_u, const Var<T>& W_q) {
  return matmul(W_y, add(matmul(W_u, avg_pool_cols(U)), matmul(W_q, avg_pool_cols(Q))));
}

template <typename T>
Var<T> predict(const Var<T>& U, const Var<T>& Q, const Var<T>& W_y, const Var<T>& W_u, const Var<T>& W_q) {
  return sigmoid(head_logits(U, Q, W_y, W_u, W_q));
}

template <typename T>
NetworkResult<T> run_network(const Encoded<T>& encoded, const BoundParams<T>& params, const ModelSpec& spec,
                             std::uint64_t gate_seed) {
  if (spec.T < 1) throw std::invalid_argument("run_network: T must be at least 1");
  if (spec.uses_knowledge() && !encoded.K) throw std::invalid_argument("run_network: knowledge module without K");
  LayerContext<T> ctx;
  ctx.modules.params = &params;
  ctx.modules.Q = encoded.Q;
  ctx.modules.K = encoded.K;
  ctx.kinds = spec.kinds;
  ctx.ablation = spec.ablation;
  ctx.gate_seed = gate_seed;

  NetworkResult<T> out;
  LayerState<T> state = initial_state(encoded.V, encoded.Q, spec.M());
  out.trace.iterations.resize(spec.T);
  for (std::size_t t = 1; t <= spec.T; ++t) state = super_layer_step(state, ctx, t, &out.trace.iterations[t - 1]);
  out.trace.path_vector = path_vector(out.trace.iterations);
  out.U = state.U;
  out.logits = head_logits(state.U, encoded.Q, params["head.W_y"], params["head.W_u"], params["head.W_q"]);
  return out;
}

template <typename T>
Var<T> bce_loss(const Var<T>& logits, const Tensor<T>& labels) {
  return bce_with_logits(logits, labels);
}

double vqa_accuracy(int human_count) {
  if (human_count < 0) throw std::invalid_argument("vqa_accuracy: negative annotator count");
  return std::min(1.0, human_count / 3.0);
}

PathMask discretize_paths(const RouteTrace& trace, double threshold) {
  PathMask mask;
  mask.reserve(trace.iterations.size());
  for (const StepRecord& r : trace.iterations) {
    std::vector<std::vector<bool>> step(r.G.rows(), std::vector<bool>(r.G.cols()));
    for (std::size_t i = 0; i < r.G.rows(); ++i)
      for (std::size_t j = 0; j < r.G.cols(); ++j) step[i][j] = r.G(i, j) > threshold;
    mask.push_back(std::move(step));
  }
  return mask;
}

std::uint64_t instance_gate_seed(std::uint64_t router_seed, const Instance& instance) {
  return derive_seed(router_seed, instance.seed);
}

template <typename T>
Forward<T> forward(Tape<T>& tape, const BoundParams<T>& params, const ModelSpec& spec, const Instance& instance,
                   std::uint64_t router_seed) {
  const Encoded<T> encoded = encode(tape, params, instance, spec.uses_knowledge());
  NetworkResult<T> net = run_network(encoded, params, spec, instance_gate_seed(router_seed, instance));
  Forward<T> out;
  out.logits = net.logits;
  out.loss = bce_loss(net.logits, instance.labels.cast<T>());
  out.trace = std::move(net.trace);
  return out;
}

template <typename T>
std::size_t argmax(const Tensor<T>& v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.numel(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

#define SUPER_INSTANTIATE(T)                                                                                     \
  template LayerState<T> initial_state(const Var<T>&, const Var<T>&, std::size_t);                               \
  template Var<T> head_logits(const Var<T>&, const Var<T>&, const Var<T>&, const Var<T>&, const Var<T>&);        \
  template Var<T> predict(const Var<T>&, const Var<T>&, const Var<T>&, const Var<T>&, const Var<T>&);            \
  template NetworkResult<T> run_network(const Encoded<T>&, const BoundParams<T>&, const ModelSpec&, std::uint64_t); \
  template Var<T> bce_loss(const Var<T>&, const Tensor<T>&);                                                     \
  template Forward<T> forward(Tape<T>&, const BoundParams<T>&, const ModelSpec&, const Instance&, std::uint64_t); \
  template std::size_t argmax(const Tensor<T>&);

SUPER_INSTANTIATE(float)
SUPER_INSTANTIATE(double)

#undef SUPER_INSTANTIATE

}  // namespace super
