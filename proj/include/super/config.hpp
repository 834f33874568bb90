// SPDX-License-Identifier: Apache-2.0
//
// Run configuration. Files are flat JSON objects; unknown keys are rejected so
// a typo cannot silently fall back to a default.

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

namespace super {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct Dims {
  std::size_t d_v = 64;
  std::size_t d = 32;
  std::size_t d_k = 24;
  std::size_t N = 12;
  std::size_t L = 6;
  std::size_t K = 8;
  std::size_t A = 16;

  bool operator==(const Dims&) const = default;
};

/// The five specialized modules, numbered as in the routing literature (1..5).
enum class ModuleKind : int {
  FocalContext = 1,
  Identity = 2,
  GlobalReduction = 3,
  LocalSemantic = 4,
  KnowledgeAugment = 5,
};

std::string module_label(ModuleKind kind);  // "R1".."R5"

enum class RouterMode { Learned, Random, None };

std::string to_string(RouterMode mode);
RouterMode router_mode_from_string(const std::string& s);

struct AblationConfig {
  std::set<int> disabled_modules;  // subset of {1..5}
  RouterMode router = RouterMode::Learned;
  bool agreements_enabled = true;
  bool memory_enabled = true;

  bool operator==(const AblationConfig&) const = default;
};

/// Parses "router=random,agreements=off,memory=off,drop=R5" style strings.
/// An empty string or "none" yields the full model.
AblationConfig parse_ablation(const std::string& spec);
std::string describe(const AblationConfig& ablation);

enum class Rule : int { Recognition = 0, Contextual = 1, Knowledge = 2 };
inline constexpr std::array<Rule, 3> kAllRules = {Rule::Recognition, Rule::Contextual, Rule::Knowledge};

std::string to_string(Rule rule);
Rule rule_from_string(const std::string& s);

/// Synthetic task parameters. Everything the generator reads lives here.
struct TaskSpec {
  Dims dims;
  std::size_t train = 2000;
  std::size_t val = 400;
  std::size_t test = 400;
  std::array<double, 3> rule_mix = {1.0 / 3, 1.0 / 3, 1.0 / 3};
  std::size_t tags = 16;           // tag vocabulary size; must not exceed A
  std::uint64_t master_seed = 7;
  double visual_noise = 0.01;      // per-element Gaussian std on F
  double tag_norm = 2.0;           // norm of tag vectors in F space
  double marker_norm = 2.0;        // norm of the designated-capsule marker
  double signature_norm = 4.0;     // norm of the shared contextual-group signature
  std::size_t context_group = 5;   // members of the contextual group
  double context_threshold = 0.5;  // cosine similarity defining the group
  double question_norm = 2.0;
  double question_noise = 0.25;
  double knowledge_norm = 2.0;
  double knowledge_noise = 0.1;
};

struct ScheduleConfig {
  double unit = 2.5e-5;        // rate per epoch during warm-up
  double cap = 1e-4;
  std::size_t decay_after = 16;  // last warm-up/plateau epoch
  std::size_t decay_every = 2;
  double decay_factor = 0.25;
  double floor = 2.5e-5;
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-8;
};

struct TrainConfig {
  std::size_t batch = 16;
  std::size_t epochs = 30;
  std::uint64_t seed = 1;
  double init_scale = 1.0;  // multiplies the 1/sqrt(fan_in) initialization
  // Same shape as ScheduleConfig{} at 30x its rates, sized for the desk dataset.
  ScheduleConfig schedule{7.5e-4, 3e-3, 16, 2, 0.25, 7.5e-4};
  AdamConfig adam;
};

struct RunConfig {
  Dims dims;
  bool with_knowledge = true;
  std::size_t T = 8;
  TrainConfig train;
  AblationConfig ablation;
  TaskSpec task;  // dims mirrored from `dims`
};

/// Throws ConfigError describing the first inconsistency found.
void validate(const RunConfig& cfg);
void validate(const TaskSpec& spec);

/// Modules that take part in routing, in ascending kind order.
std::vector<ModuleKind> active_modules(const RunConfig& cfg);

nlohmann::json to_json(const RunConfig& cfg);
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::string& path);

nlohmann::json to_json(const TaskSpec& spec);
TaskSpec task_spec_from_json(const nlohmann::json& j);

/// The small configuration used for gradient checks.
RunConfig tiny_config();

}  // namespace super
