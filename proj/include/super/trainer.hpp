// SPDX-License-Identifier: Apache-2.0
//
// Adam with warm-up/step-decay schedule, the epoch loop, evaluation and
// metrics logging.

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "super/config.hpp"
#include "super/data.hpp"
#include "super/network.hpp"
#include "super/params.hpp"

namespace super {

/// Epochs 1..decay_after: min(unit * epoch, cap). Afterwards the rate of epoch
/// decay_after is multiplied by decay_factor once per decay_every epochs
/// (starting at decay_after + 1) and never drops below floor.
double lr_schedule(std::size_t epoch, const ScheduleConfig& schedule);

template <typename T>
struct AdamState {
  std::vector<Tensor<T>> m;
  std::vector<Tensor<T>> v;
  std::uint64_t step = 0;
};

template <typename T>
AdamState<T> make_adam_state(const ParamStore<T>& params);

/// Bias-corrected Adam on every parameter using its `grad`. Throws
/// NumericError without touching anything if a gradient is non-finite.
template <typename T>
void adam_step(ParamStore<T>& params, AdamState<T>& state, const AdamConfig& adam, double lr);

/// Seed of the random-router stream for a training seed.
std::uint64_t router_seed(const RunConfig& cfg);

struct EvalResult {
  std::size_t count = 0;
  double accuracy = 0.0;
  double loss = 0.0;
  std::map<Rule, double> per_rule_accuracy;  // rules present in the split only
  std::map<Rule, std::size_t> per_rule_count;
  std::vector<std::size_t> predictions;
};

EvalResult evaluate(const std::vector<Instance>& instances, const RunConfig& cfg, ParamStore<float>& params);

nlohmann::json to_json(const EvalResult& r);

/// Accuracy of always answering the most frequent label: the chance level
/// of a split as seen through its label marginals.
double chance_level(const std::vector<Instance>& instances, std::size_t A);

struct EpochMetrics {
  std::size_t epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_acc = 0.0;
  std::map<Rule, double> per_rule_acc;
};

nlohmann::json to_json(const EpochMetrics& m);

struct TrainResult {
  std::vector<EpochMetrics> history;
  std::size_t best_epoch = 0;  // 0 = initial parameters
  double best_val_acc = 0.0;
  double best_val_loss = 0.0;
  bool aborted = false;  // non-finite value encountered
  std::string abort_reason;
  ParamStore<float> best_params;
};

struct TrainOptions {
  std::optional<std::filesystem::path> out_dir;  // checkpoint + metrics.jsonl
  bool verbose = false;
};

/// Trains from init_params(model_spec(cfg), cfg.train.seed, ...). With an
/// out_dir, the initial parameters are checkpointed first and replaced each
/// time validation improves (accuracy, then lower loss). A non-finite value
/// stops training and leaves the last good checkpoint in place.
TrainResult train(const Dataset& data, const RunConfig& cfg, const TrainOptions& options = {});

}  // namespace super
