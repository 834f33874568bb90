// SPDX-License-Identifier: Apache-2.0

#include "super/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>

#include "super/checkpoint.hpp"
#include "super/io.hpp"

namespace super {

namespace {

constexpr std::uint64_t kShuffleStream = 0x5348554646ULL;
constexpr std::uint64_t kRouterStream = 0x524f555445ULL;

}  // namespace

double lr_schedule(std::size_t epoch, const ScheduleConfig& s) {
  if (epoch < 1) throw std::invalid_argument("lr_schedule: epochs are numbered from 1");
  if (epoch <= s.decay_after) return std::min(s.unit * static_cast<double>(epoch), s.cap);
  const double plateau = std::min(s.unit * static_cast<double>(s.decay_after), s.cap);
  const std::size_t decays = (epoch - s.decay_after - 1) / s.decay_every + 1;
  return std::max(plateau * std::pow(s.decay_factor, static_cast<double>(decays)), s.floor);
}

template <typename T>
AdamState<T> make_adam_state(const ParamStore<T>& params) {
  AdamState<T> state;
  for (const auto& p : params.items()) {
    state.m.emplace_back(p.value.shape());
    state.v.emplace_back(p.value.shape());
  }
  return state;
}

template <typename T>
void adam_step(ParamStore<T>& params, AdamState<T>& state, const AdamConfig& adam, double lr) {
  auto& items = params.items();
  if (state.m.size() != items.size()) throw std::invalid_argument("adam_step: optimizer state does not match params");
  for (const auto& p : items)
    if (!p.grad.all_finite()) throw NumericError("adam_step: non-finite gradient for " + p.name);
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(adam.beta1, t);
  const double c2 = 1.0 - std::pow(adam.beta2, t);
  for (std::size_t k = 0; k < items.size(); ++k) {
    Tensor<T>& w = items[k].value;
    const Tensor<T>& g = items[k].grad;
    Tensor<T>& m = state.m[k];
    Tensor<T>& v = state.v[k];
    for (std::size_t i = 0; i < w.numel(); ++i) {
      m[i] = static_cast<T>(adam.beta1 * m[i] + (1.0 - adam.beta1) * g[i]);
      v[i] = static_cast<T>(adam.beta2 * v[i] + (1.0 - adam.beta2) * g[i] * g[i]);
      const double m_hat = m[i] / c1;
      const double v_hat = v[i] / c2;
      w[i] = static_cast<T>(w[i] - lr * m_hat / (std::sqrt(v_hat) + adam.eps));
    }
  }
}

std::uint64_t router_seed(const RunConfig& cfg) { return derive_seed(cfg.train.seed, kRouterStream); }

EvalResult evaluate(const std::vector<Instance>& instances, const RunConfig& cfg, ParamStore<float>& params) {
  const ModelSpec spec = model_spec(cfg);
  const std::uint64_t rseed = router_seed(cfg);
  EvalResult r;
  r.count = instances.size();
  std::map<Rule, std::size_t> correct;
  std::size_t total_correct = 0;
  double loss_sum = 0.0;
  for (const Instance& inst : instances) {
    Tape<float> tape;
    BoundParams<float> bound(tape, params);
    const Forward<float> f = forward(tape, bound, spec, inst, rseed);
    const std::size_t pred = argmax(f.logits.value());
    const bool hit = pred == answer_index(inst);
    r.predictions.push_back(pred);
    loss_sum += f.loss.value()[0];
    total_correct += hit;
    correct[inst.rule] += hit;
    ++r.per_rule_count[inst.rule];
  }
  if (r.count) {
    r.accuracy = static_cast<double>(total_correct) / static_cast<double>(r.count);
    r.loss = loss_sum / static_cast<double>(r.count);
  }
  for (const auto& [rule, n] : r.per_rule_count)
    r.per_rule_accuracy[rule] = static_cast<double>(correct[rule]) / static_cast<double>(n);
  return r;
}

namespace {

nlohmann::json rule_map(const std::map<Rule, double>& m) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [rule, v] : m) j[to_string(rule)] = v;
  return j;
}

}  // namespace

nlohmann::json to_json(const EvalResult& r) {
  nlohmann::json counts = nlohmann::json::object();
  for (const auto& [rule, n] : r.per_rule_count) counts[to_string(rule)] = n;
  return {{"overall", r.accuracy}, {"per_rule", rule_map(r.per_rule_accuracy)}, {"loss", r.loss},
          {"count", r.count}, {"per_rule_count", counts}};
}

double chance_level(const std::vector<Instance>& instances, std::size_t A) {
  if (instances.empty()) return 1.0 / static_cast<double>(A);
  std::vector<std::size_t> freq(A, 0);
  for (const Instance& inst : instances) ++freq.at(answer_index(inst));
  return static_cast<double>(*std::max_element(freq.begin(), freq.end())) / static_cast<double>(instances.size());
}

nlohmann::json to_json(const EpochMetrics& m) {
  return {{"epoch", m.epoch},         {"lr", m.lr},           {"train_loss", m.train_loss},
          {"val_loss", m.val_loss},   {"val_acc", m.val_acc}, {"per_rule_acc", rule_map(m.per_rule_acc)}};
}

TrainResult train(const Dataset& data, const RunConfig& cfg, const TrainOptions& options) {
  validate(cfg);
  check_data_compatible(cfg.dims, data.spec.dims);
  const ModelSpec spec = model_spec(cfg);
  const std::uint64_t rseed = router_seed(cfg);
  ParamStore<float> params = init_params(spec, cfg.train.seed, cfg.train.init_scale);
  AdamState<float> adam = make_adam_state(params);

  TrainResult result;
  result.best_params = params;
  std::string metrics_text;
  if (options.out_dir) {
    save_checkpoint(*options.out_dir, cfg, params);
    write_file(*options.out_dir / "metrics.jsonl", "");
  }

  const std::vector<Instance>& train_set = data.train;
  std::vector<std::size_t> order(train_set.size());
  bool have_best = false;
  for (std::size_t epoch = 1; epoch <= cfg.train.epochs; ++epoch) {
    EpochMetrics metrics;
    metrics.epoch = epoch;
    metrics.lr = lr_schedule(epoch, cfg.train.schedule);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(cfg.train.seed, kShuffleStream, epoch));
    std::shuffle(order.begin(), order.end(), rng);

    double loss_sum = 0.0;
    try {
      for (std::size_t start = 0; start < order.size(); start += cfg.train.batch) {
        const std::size_t end = std::min(order.size(), start + cfg.train.batch);
        params.zero_grad();
        for (std::size_t i = start; i < end; ++i) {
          Tape<float> tape;
          BoundParams<float> bound(tape, params);
          const Forward<float> f = forward(tape, bound, spec, train_set[order[i]], rseed);
          loss_sum += f.loss.value()[0];
          tape.backward(f.loss);
        }
        const float inv = 1.0f / static_cast<float>(end - start);
        for (auto& p : params.items())
          for (float& g : p.grad.data()) g *= inv;
        adam_step(params, adam, cfg.train.adam, metrics.lr);
      }
      for (const auto& p : params.items())
        if (!p.value.all_finite()) throw NumericError("non-finite parameter " + p.name + " after update");
    } catch (const NumericError& e) {
      result.aborted = true;
      result.abort_reason = "epoch " + std::to_string(epoch) + ": " + e.what();
      break;
    }
    metrics.train_loss = train_set.empty() ? 0.0 : loss_sum / static_cast<double>(train_set.size());

    EvalResult val;
    try {
      val = evaluate(data.val, cfg, params);
    } catch (const NumericError& e) {
      result.aborted = true;
      result.abort_reason = "epoch " + std::to_string(epoch) + " validation: " + e.what();
      break;
    }
    metrics.val_loss = val.loss;
    metrics.val_acc = val.accuracy;
    metrics.per_rule_acc = val.per_rule_accuracy;
    result.history.push_back(metrics);

    const bool better = !have_best || val.accuracy > result.best_val_acc ||
                        (val.accuracy == result.best_val_acc && val.loss < result.best_val_loss);
    if (better) {
      have_best = true;
      result.best_epoch = epoch;
      result.best_val_acc = val.accuracy;
      result.best_val_loss = val.loss;
      result.best_params = params;
      if (options.out_dir) save_checkpoint(*options.out_dir, cfg, params);
    }
    if (options.out_dir) {
      metrics_text += to_json(metrics).dump() + "\n";
      write_file(*options.out_dir / "metrics.jsonl", metrics_text);
    }
    if (options.verbose)
      std::cerr << "epoch " << epoch << " lr " << metrics.lr << " train_loss " << metrics.train_loss << " val_acc "
                << metrics.val_acc << " val_loss " << metrics.val_loss << (better ? " *" : "") << "\n";
  }
  return result;
}

template AdamState<float> make_adam_state(const ParamStore<float>&);
template AdamState<double> make_adam_state(const ParamStore<double>&);
template void adam_step(ParamStore<float>&, AdamState<float>&, const AdamConfig&, double);
template void adam_step(ParamStore<double>&, AdamState<double>&, const AdamConfig&, double);

}  // namespace super
