// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include "super/network.hpp"
#include "support/oracle.hpp"
#include "support/test_util.hpp"

using namespace super;
using testutil::random_tensor;
using testutil::random_tensor_f;

namespace {

/// Every tensor drawn at unit fan-in scale, biases and the R1 mixer included.
ParamStore<double> random_params(const ModelSpec& spec, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  ParamStore<double> store;
  for (const auto& [name, shape] : parameter_shapes(spec))
    store.add(name, random_tensor(rng, shape.rows, shape.cols, 1.0 / std::sqrt(static_cast<double>(shape.cols))));
  return store;
}

/// Instance with unit-scale entries and a one-hot label.
Instance random_instance(const Dims& dims, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Instance inst;
  inst.rule = static_cast<Rule>(seed % 3);
  inst.seed = seed;
  inst.F = random_tensor_f(rng, dims.d_v, dims.N);
  inst.Qhat = random_tensor_f(rng, dims.d, dims.L);
  inst.Kraw = random_tensor_f(rng, dims.d_k, dims.K);
  inst.labels = Matrix(Shape{dims.A, 1});
  inst.labels[seed % dims.A] = 1.0f;
  return inst;
}

ModelSpec spec_for(const Dims& dims, std::size_t T, const AblationConfig& ablation = {}, bool knowledge = true) {
  RunConfig cfg = tiny_config();
  cfg.dims = dims;
  cfg.task.dims = dims;
  cfg.task.tags = dims.A;
  cfg.task.rule_mix = {0.5, 0.0, 0.5};
  cfg.T = T;
  cfg.with_knowledge = knowledge;
  cfg.ablation = ablation;
  return model_spec(cfg);
}

template <typename T>
struct Outcome {
  Tensor<double> U, logits;
  RouteTrace trace;
};

template <typename T>
Outcome<T> run(const ModelSpec& spec, ParamStore<T>& store, const Instance& inst, std::uint64_t gate_seed) {
  Tape<T> tape;
  BoundParams<T> bound(tape, store);
  const auto enc = encode(tape, bound, inst, spec.uses_knowledge());
  const auto net = run_network(enc, bound, spec, gate_seed);
  return {net.U.value().template cast<double>(), net.logits.value().template cast<double>(), net.trace};
}

double max_scaled_diff(const Tensor<double>& a, const Tensor<double>& b) {
  EXPECT_EQ(a.shape(), b.shape());
  double worst = 0;
  for (std::size_t i = 0; i < a.numel(); ++i)
    worst = std::max(worst, std::abs(a[i] - b[i]) / std::max({1.0, std::abs(a[i]), std::abs(b[i])}));
  return worst;
}

Instance permute_capsules(Instance inst, const std::vector<std::size_t>& perm) {
  Matrix F = inst.F;
  for (std::size_t i = 0; i < F.rows(); ++i)
    for (std::size_t j = 0; j < F.cols(); ++j) F(i, j) = inst.F(i, perm[j]);
  inst.F = F;
  return inst;
}

const Dims kSmall{6, 5, 4, 4, 3, 3, 5};

}  // namespace

TEST(ParameterShapes, CanonicalOrderAndUniqueNames) {
  const ModelSpec spec = spec_for(kSmall, 2);
  const auto shapes = parameter_shapes(spec);
  std::vector<std::string> names;
  for (const auto& [name, shape] : shapes) names.push_back(name);
  EXPECT_EQ(std::set<std::string>(names.begin(), names.end()).size(), names.size());
  EXPECT_EQ(names.front(), "proj.W_proj");
  EXPECT_EQ(names[1], "proj.W_Qhat");
  EXPECT_EQ(names[2], "proj.W_k");
  EXPECT_EQ(names.back(), "head.W_q");
  const auto find = [&](const std::string& n) { return std::find(names.begin(), names.end(), n) - names.begin(); };
  EXPECT_LT(find("R5.W_9"), find("layer.W_g.1"));
  EXPECT_LT(find("layer.W_g.5"), find("mem.W_z"));
  EXPECT_LT(find("mem.W_r"), find("head.W_y"));
  for (const auto& [name, shape] : shapes) {
    if (name == "proj.W_proj") EXPECT_EQ(shape, (Shape{5, 6}));
    if (name == "proj.W_Qhat") EXPECT_EQ(shape, (Shape{1, 5}));
    if (name == "proj.W_k") EXPECT_EQ(shape, (Shape{5, 4}));
    if (name.rfind("layer.W_g.", 0) == 0) EXPECT_EQ(shape, (Shape{5, 5}));
    if (name == "head.W_y") EXPECT_EQ(shape, (Shape{5, 5}));
    if (name == "head.W_u" || name == "head.W_q") EXPECT_EQ(shape, (Shape{5, 5}));
  }
}

TEST(ParameterShapes, DisabledPartsContributeNothing) {
  AblationConfig ablation;
  ablation.router = RouterMode::Random;
  ablation.memory_enabled = false;
  ablation.disabled_modules = {5};
  const auto shapes = parameter_shapes(spec_for(kSmall, 2, ablation));
  for (const auto& [name, shape] : shapes) {
    EXPECT_NE(name, "proj.W_k");
    EXPECT_NE(name.rfind("R5.", 0), 0u) << name;
    EXPECT_NE(name.rfind("layer.", 0), 0u) << name;
    EXPECT_NE(name.rfind("mem.", 0), 0u) << name;
  }
  const ModelSpec no_knowledge = spec_for(kSmall, 2, {}, false);
  EXPECT_EQ(no_knowledge.M(), 4u);
  for (const auto& [name, shape] : parameter_shapes(no_knowledge))
    if (name.rfind("layer.W_g.", 0) == 0) EXPECT_EQ(shape, (Shape{4, 5}));
}

TEST(InitParams, ZeroBiasesAndMixerAndSharedStreams) {
  const ParamStore<float> full = init_params(spec_for(kSmall, 2), 9, 1.0);
  for (const auto& p : full.items()) {
    const bool zero = p.name.find(".b_") != std::string::npos || p.name == "R1.W_3";
    const bool all_zero = std::all_of(p.value.data().begin(), p.value.data().end(), [](float v) { return v == 0.0f; });
    EXPECT_EQ(all_zero, zero) << p.name;
  }
  AblationConfig ablation;
  ablation.memory_enabled = false;
  const ParamStore<float> ablated = init_params(spec_for(kSmall, 2, ablation), 9, 1.0);
  for (const auto& p : ablated.items()) EXPECT_EQ(p.value, full.at(p.name).value) << p.name;
  EXPECT_NE(init_params(spec_for(kSmall, 2), 10, 1.0).at("head.W_y").value, full.at("head.W_y").value);
}

TEST(InitParams, ScaleFollowsFanIn) {
  const Dims big{64, 48, 24, 12, 6, 8, 16};
  const ParamStore<float> store = init_params(spec_for(big, 1), 3, 2.0);
  const auto& w = store.at("mem.W_z").value;
  double ss = 0;
  for (float v : w.data()) ss += static_cast<double>(v) * v;
  const double sd = std::sqrt(ss / static_cast<double>(w.numel()));
  EXPECT_NEAR(sd, 2.0 / std::sqrt(48.0), 0.1 * 2.0 / std::sqrt(48.0));
}

TEST(RunNetwork, InitialMemoryBroadcastsPooledQuestion) {
  std::mt19937_64 rng(1);
  Tape<double> tape;
  const auto V = tape.constant(random_tensor(rng, 4, 5));
  const auto Qt = random_tensor(rng, 4, 3);
  const auto state = initial_state(V, tape.constant(Qt), 3);
  ASSERT_EQ(state.V.size(), 3u);
  for (const auto& v : state.V) EXPECT_EQ(v.value(), V.value());
  for (std::size_t i = 0; i < 4; ++i) {
    const double mean = (Qt(i, 0) + Qt(i, 1) + Qt(i, 2)) / 3.0;
    for (std::size_t j = 0; j < 5; ++j) {
      EXPECT_NEAR(state.U.value()(i, j), mean, 1e-15);
      EXPECT_EQ(state.U.value()(i, j), state.U.value()(i, 0));
    }
  }
  for (double b : state.b.value().data()) EXPECT_EQ(b, 0.0);
  for (double h : state.H.value().data()) EXPECT_EQ(h, 0.0);
  EXPECT_EQ(state.b.shape(), (Shape{3, 5}));
}

TEST(RunNetwork, SingleIterationEqualsManualStep) {
  const ModelSpec spec = spec_for(kSmall, 1);
  ParamStore<double> store = random_params(spec, 2);
  const Instance inst = random_instance(kSmall, 3);
  const auto net = run<double>(spec, store, inst, 0);

  Tape<double> tape;
  BoundParams<double> p(tape, store);
  const auto enc = encode(tape, p, inst, true);
  LayerContext<double> ctx{{&p, enc.Q, enc.K}, spec.kinds, spec.ablation, 0};
  const auto state = super_layer_step(initial_state(enc.V, enc.Q, spec.M()), ctx, 1, nullptr);
  const auto logits = head_logits(state.U, enc.Q, p["head.W_y"], p["head.W_u"], p["head.W_q"]);
  EXPECT_EQ(net.U, state.U.value());
  EXPECT_EQ(net.logits, logits.value());
  ASSERT_EQ(net.trace.iterations.size(), 1u);
}

TEST(RunNetwork, MatchesScalarOracleOnSeededConfigs) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> dim(1, 6);
    Dims dims{dim(rng), dim(rng), dim(rng), dim(rng), dim(rng), dim(rng), dim(rng) + 2};
    dims.A = std::max(dims.A, dims.K);
    AblationConfig ablation;
    if (seed % 5 == 1) ablation.router = RouterMode::Random;
    if (seed % 5 == 2) ablation.agreements_enabled = false;
    if (seed % 5 == 3) ablation.memory_enabled = false;
    if (seed % 5 == 4) ablation.router = RouterMode::None;
    const ModelSpec spec = spec_for(dims, 2, ablation, seed % 2 == 0);
    ParamStore<double> store = random_params(spec, 100 + seed);
    const Instance inst = random_instance(dims, 200 + seed);
    const auto net = run<double>(spec, store, inst, 77);
    const auto ref = oracle::run_network(inst, oracle::from_store(store), spec.kinds, 2, ablation, 77);
    EXPECT_LT(max_scaled_diff(net.U, oracle::to_tensor(ref.U)), 1e-10) << seed;
    EXPECT_LT(max_scaled_diff(net.logits, oracle::to_tensor(ref.logits)), 1e-10) << seed;
    for (std::size_t t = 0; t < 2; ++t) {
      EXPECT_LT(max_scaled_diff(net.trace.iterations[t].G, oracle::to_tensor(ref.steps[t].G)), 1e-10);
      EXPECT_LT(max_scaled_diff(net.trace.iterations[t].c, oracle::to_tensor(ref.steps[t].c)), 1e-10);
    }

    ParamStore<float> low = store.cast<float>();
    EXPECT_LT(max_scaled_diff(run<float>(spec, low, inst, 77).logits, oracle::to_tensor(ref.logits)), 1e-5) << seed;
  }
}

TEST(RunNetwork, RejectsZeroIterations) {
  ModelSpec spec = spec_for(kSmall, 1);
  spec.T = 0;
  ParamStore<double> store = random_params(spec, 4);
  EXPECT_THROW(run<double>(spec, store, random_instance(kSmall, 1), 0), std::invalid_argument);
}

TEST(Predict, ZeroHeadGivesHalf) {
  std::mt19937_64 rng(5);
  Tape<double> tape;
  const auto y = predict(tape.constant(random_tensor(rng, 4, 3)), tape.constant(random_tensor(rng, 4, 2)),
                         tape.constant(Tensor<double>(Shape{6, 4})), tape.constant(random_tensor(rng, 4, 4)),
                         tape.constant(random_tensor(rng, 4, 4)));
  ASSERT_EQ(y.shape(), (Shape{6, 1}));
  for (double v : y.value().data()) EXPECT_EQ(v, 0.5);
}

TEST(Predict, HeadMatchesScalarEvaluation) {
  std::mt19937_64 rng(6);
  const auto U = random_tensor(rng, 3, 4), Q = random_tensor(rng, 3, 2), Wy = random_tensor(rng, 5, 3),
             Wu = random_tensor(rng, 3, 3), Wq = random_tensor(rng, 3, 3);
  Tape<double> tape;
  const auto y = predict(tape.constant(U), tape.constant(Q), tape.constant(Wy), tape.constant(Wu), tape.constant(Wq));
  std::vector<double> z(3, 0.0);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t k = 0; k < 3; ++k) {
      double u = 0, q = 0;
      for (std::size_t j = 0; j < 4; ++j) u += U(k, j) / 4.0;
      for (std::size_t j = 0; j < 2; ++j) q += Q(k, j) / 2.0;
      z[i] += Wu(i, k) * u + Wq(i, k) * q;
    }
  for (std::size_t a = 0; a < 5; ++a) {
    double logit = 0;
    for (std::size_t i = 0; i < 3; ++i) logit += Wy(a, i) * z[i];
    EXPECT_NEAR(y.value()[a], oracle::sig(logit), 1e-14);
  }
}

TEST(Predict, InvariantToCapsuleOrder) {
  std::mt19937_64 rng(7);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Dims dims{6, 5, 4, 6, 3, 3, 5};
    const ModelSpec spec = spec_for(dims, 3);
    ParamStore<double> store = random_params(spec, 300 + seed);
    const Instance inst = random_instance(dims, 400 + seed);
    std::vector<std::size_t> perm(6);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    const auto a = run<double>(spec, store, inst, 0), b = run<double>(spec, store, permute_capsules(inst, perm), 0);
    EXPECT_LT(max_scaled_diff(a.logits, b.logits), 1e-10);
    ParamStore<float> low = store.cast<float>();
    EXPECT_LT(max_scaled_diff(run<float>(spec, low, permute_capsules(inst, perm), 0).logits, a.logits), 1e-5);
  }
}

TEST(BceLoss, UniformHalfGivesLogTwo) {
  Tape<double> tape;
  Tensor<double> labels(Shape{4, 1});
  labels[2] = 1.0;
  EXPECT_NEAR(bce_loss(tape.constant(Tensor<double>(Shape{4, 1})), labels).value()[0], std::log(2.0), 1e-15);
}

TEST(BceLoss, SaturatedCorrectLogitsGiveNearZero) {
  Tape<double> tape;
  Tensor<double> labels(Shape{3, 1}), logits(Shape{3, 1}, -40.0);
  labels[1] = 1.0;
  logits[1] = 40.0;
  EXPECT_LT(bce_loss(tape.constant(logits), labels).value()[0], 1e-15);
}

TEST(BceLoss, MatchesDirectEvaluation) {
  std::mt19937_64 rng(8);
  const auto logits = random_tensor(rng, 7, 1, 3.0);
  Tensor<double> labels(Shape{7, 1});
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (auto& l : labels.data()) l = u(rng);
  Tape<double> tape;
  EXPECT_NEAR(bce_loss(tape.constant(logits), labels).value()[0],
              oracle::bce(oracle::from_tensor(logits), oracle::from_tensor(labels)), 1e-14);
}

TEST(BceLoss, RejectsLabelsOutsideUnitInterval) {
  Tape<double> tape;
  EXPECT_ANY_THROW(bce_loss(tape.constant(Tensor<double>(Shape{2, 1})), Tensor<double>::column({1.5, 0.0})));
  EXPECT_ANY_THROW(bce_loss(tape.constant(Tensor<double>(Shape{2, 1})), Tensor<double>::column({-0.1, 0.0})));
}

TEST(VqaAccuracy, FollowsHumanAgreement) {
  EXPECT_EQ(vqa_accuracy(3), 1.0);
  EXPECT_EQ(vqa_accuracy(2), 2.0 / 3.0);
  EXPECT_EQ(vqa_accuracy(1), 1.0 / 3.0);
  EXPECT_EQ(vqa_accuracy(0), 0.0);
  EXPECT_EQ(vqa_accuracy(10), 1.0);
  EXPECT_THROW(vqa_accuracy(-1), std::invalid_argument);
}

TEST(RouteTrace, PathVectorConcatenatesGatesRowMajor) {
  std::vector<StepRecord> its(2);
  its[0].G = Tensor<double>::from_rows({{0.1, 0.2}, {0.3, 0.4}});
  its[1].G = Tensor<double>::from_rows({{0.5, 0.6}, {0.7, 0.8}});
  EXPECT_EQ(path_vector(its), (std::vector<double>{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8}));
}

TEST(RouteTrace, PathVectorLengthIsModulesSquaredTimesIterations) {
  const Dims dims{6, 5, 4, 3, 2, 2, 4};
  for (auto [T, knowledge] : std::vector<std::pair<std::size_t, bool>>{{8, true}, {3, false}, {1, true}}) {
    const ModelSpec spec = spec_for(dims, T, {}, knowledge);
    ParamStore<double> store = random_params(spec, 5);
    const auto out = run<double>(spec, store, random_instance(dims, 6), 0);
    EXPECT_EQ(out.trace.path_vector.size(), spec.M() * spec.M() * T);
    if (T == 8 && knowledge) EXPECT_EQ(out.trace.path_vector.size(), 200u);
  }
}

TEST(RouteTrace, DiscretizeAtThreshold) {
  RouteTrace trace;
  trace.iterations.resize(2);
  for (auto& it : trace.iterations) it.G = Tensor<double>(Shape{3, 3}, 0.5);
  trace.iterations[1].G(0, 2) = 0.61;
  const PathMask mask = discretize_paths(trace);
  ASSERT_EQ(mask.size(), 2u);
  for (std::size_t t = 0; t < 2; ++t)
    for (std::size_t m = 0; m < 3; ++m)
      for (std::size_t k = 0; k < 3; ++k) EXPECT_EQ(mask[t][m][k], t == 1 && m == 0 && k == 2);
  for (const auto& it : discretize_paths(trace, 0.0))
    for (const auto& row : it)
      for (bool b : row) EXPECT_TRUE(b);
  for (const auto& it : discretize_paths(trace, 1.0))
    for (const auto& row : it)
      for (bool b : row) EXPECT_FALSE(b);
}

TEST(Forward, RepeatsBitwise) {
  const ModelSpec spec = spec_for(kSmall, 3);
  ParamStore<float> store = init_params(spec, 1, 1.0);
  const Instance inst = random_instance(kSmall, 7);
  Tape<float> t1, t2;
  BoundParams<float> b1(t1, store), b2(t2, store);
  const auto f1 = forward(t1, b1, spec, inst, 5), f2 = forward(t2, b2, spec, inst, 5);
  EXPECT_EQ(f1.logits.value(), f2.logits.value());
  EXPECT_EQ(f1.loss.value(), f2.loss.value());
  EXPECT_EQ(f1.trace.path_vector, f2.trace.path_vector);
}

TEST(Forward, DefaultAblationSpellingsAreIdentical) {
  const ModelSpec base = spec_for(kSmall, 2);
  const ModelSpec spelled = spec_for(kSmall, 2, parse_ablation("router=learned,agreements=on,memory=on"));
  EXPECT_EQ(parameter_shapes(base), parameter_shapes(spelled));
  ParamStore<float> store = init_params(base, 2, 1.0);
  const Instance inst = random_instance(kSmall, 8);
  Tape<float> t1, t2;
  BoundParams<float> b1(t1, store), b2(t2, store);
  EXPECT_EQ(forward(t1, b1, base, inst, 3).logits.value(), forward(t2, b2, spelled, inst, 3).logits.value());
}

TEST(Forward, RandomRouterIsKeyedPerInstance) {
  AblationConfig ablation;
  ablation.router = RouterMode::Random;
  const ModelSpec spec = spec_for(kSmall, 2, ablation);
  ParamStore<float> store = init_params(spec, 3, 1.0);
  const Instance a = random_instance(kSmall, 9), b = random_instance(kSmall, 10);
  EXPECT_NE(instance_gate_seed(4, a), instance_gate_seed(4, b));
  EXPECT_NE(instance_gate_seed(4, a), instance_gate_seed(5, a));
  Tape<float> t1, t2, t3;
  BoundParams<float> b1(t1, store), b2(t2, store), b3(t3, store);
  const auto fa = forward(t1, b1, spec, a, 4), fb = forward(t2, b2, spec, b, 4), fa2 = forward(t3, b3, spec, a, 4);
  EXPECT_NE(fa.trace.path_vector, fb.trace.path_vector);
  EXPECT_EQ(fa.trace.path_vector, fa2.trace.path_vector);
  for (double g : fa.trace.path_vector) {
    EXPECT_GT(g, 0.0);
    EXPECT_LT(g, 1.0);
  }
}

TEST(Forward, GradientsMatchFiniteDifferences) {
  // Unit-scale inputs and parameters keep the finite-difference truncation
  // error small; the generated-data check lives in the gradcheck command.
  const Dims dims{5, 4, 3, 3, 2, 2, 3};
  const ModelSpec spec = spec_for(dims, 2);
  ParamStore<double> store = random_params(spec, 11);
  const Instance inst = random_instance(dims, 12);
  const LossFn loss = [&](Tape<double>& tape, const BoundParams<double>& bound) {
    return forward(tape, bound, spec, inst, 0).loss;
  };
  const auto report = finite_diff_check(loss, store);
  EXPECT_EQ(report.params.size(), store.size());
  for (const auto& p : report.params) EXPECT_LE(p.max_rel_error, 1e-4) << p.name;
}

TEST(Argmax, TiesGoToLowestIndex) {
  EXPECT_EQ(argmax(Tensor<float>::column({0.2f, 0.7f, 0.7f, 0.1f})), 1u);
  EXPECT_EQ(argmax(Tensor<double>::column({3.0, 3.0})), 0u);
  EXPECT_EQ(argmax(Tensor<double>::column({-1.0, -0.5, -2.0})), 1u);
}
