// SPDX-License-Identifier: Apache-2.0

#include "super/config.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

namespace super {

using nlohmann::json;

std::string module_label(ModuleKind kind) { return "R" + std::to_string(static_cast<int>(kind)); }

std::string to_string(RouterMode mode) {
  switch (mode) {
    case RouterMode::Learned: return "learned";
    case RouterMode::Random: return "random";
    case RouterMode::None: return "none";
  }
  return "learned";
}

RouterMode router_mode_from_string(const std::string& s) {
  if (s == "learned") return RouterMode::Learned;
  if (s == "random") return RouterMode::Random;
  if (s == "none") return RouterMode::None;
  throw ConfigError("unknown router mode '" + s + "' (expected learned, random or none)");
}

std::string to_string(Rule rule) {
  switch (rule) {
    case Rule::Recognition: return "recognition";
    case Rule::Contextual: return "contextual";
    case Rule::Knowledge: return "knowledge";
  }
  return "recognition";
}

Rule rule_from_string(const std::string& s) {
  if (s == "recognition") return Rule::Recognition;
  if (s == "contextual") return Rule::Contextual;
  if (s == "knowledge") return Rule::Knowledge;
  throw ConfigError("unknown rule '" + s + "'");
}

namespace {

bool parse_switch(const std::string& key, const std::string& v) {
  if (v == "on" || v == "true" || v == "1") return true;
  if (v == "off" || v == "false" || v == "0") return false;
  throw ConfigError("ablation: '" + key + "' expects on/off, got '" + v + "'");
}

int parse_module(const std::string& v) {
  std::string s = v;
  if (!s.empty() && (s[0] == 'R' || s[0] == 'r')) s = s.substr(1);
  if (s.size() != 1 || s[0] < '1' || s[0] > '5') throw ConfigError("ablation: bad module '" + v + "'");
  return s[0] - '0';
}

}  // namespace

AblationConfig parse_ablation(const std::string& spec) {
  AblationConfig out;
  if (spec.empty() || spec == "none" || spec == "full") return out;
  std::stringstream ss(spec);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw ConfigError("ablation: expected key=value, got '" + item + "'");
    const std::string key = item.substr(0, eq), value = item.substr(eq + 1);
    if (key == "router") {
      out.router = router_mode_from_string(value);
    } else if (key == "agreements") {
      out.agreements_enabled = parse_switch(key, value);
    } else if (key == "memory") {
      out.memory_enabled = parse_switch(key, value);
    } else if (key == "drop") {
      out.disabled_modules.insert(parse_module(value));
    } else {
      throw ConfigError("ablation: unknown key '" + key + "'");
    }
  }
  return out;
}

std::string describe(const AblationConfig& a) {
  std::string s;
  auto append = [&s](const std::string& part) { s += (s.empty() ? "" : ",") + part; };
  if (a.router != RouterMode::Learned) append("router=" + to_string(a.router));
  if (!a.agreements_enabled) append("agreements=off");
  if (!a.memory_enabled) append("memory=off");
  for (int m : a.disabled_modules) append("drop=R" + std::to_string(m));
  return s.empty() ? "full" : s;
}

void validate(const TaskSpec& spec) {
  const Dims& d = spec.dims;
  for (std::size_t v : {d.d_v, d.d, d.d_k, d.N, d.L, d.K, d.A})
    if (v < 1) throw ConfigError("all dimensions must be >= 1");
  double mix = 0;
  for (double p : spec.rule_mix) {
    if (!(p >= 0) || !std::isfinite(p)) throw ConfigError("rule_mix entries must be finite and >= 0");
    mix += p;
  }
  if (std::abs(mix - 1.0) > 1e-9) throw ConfigError("rule_mix must sum to 1");
  if (spec.tags < 2) throw ConfigError("tag vocabulary must hold at least 2 tags");
  if (d.A < spec.tags)
    throw ConfigError("A (" + std::to_string(d.A) + ") is smaller than the tag vocabulary (" +
                      std::to_string(spec.tags) + ")");
  if (d.K > spec.tags) throw ConfigError("K facts need at least K distinct tags");
  if (spec.rule_mix[static_cast<int>(Rule::Contextual)] > 0) {
    const std::size_t g = spec.context_group;
    const std::size_t majority = g / 2 + 1;
    if (g < 1 || d.N < g + majority + 1)
      throw ConfigError("contextual rule needs N >= context_group + majority + 1");
    if (spec.tags < g + 2) throw ConfigError("contextual rule needs tags >= context_group + 2");
  }
  if (!(spec.context_threshold > 0 && spec.context_threshold < 1))
    throw ConfigError("context_threshold must lie in (0, 1)");
  for (double v : {spec.visual_noise, spec.question_noise, spec.knowledge_noise})
    if (!(v >= 0)) throw ConfigError("noise levels must be >= 0");
}

void validate(const RunConfig& cfg) {
  if (cfg.T < 1) throw ConfigError("T must be >= 1");
  if (cfg.task.dims != cfg.dims) throw ConfigError("task dims disagree with model dims");
  validate(cfg.task);
  if (cfg.train.batch < 1) throw ConfigError("batch must be >= 1");
  for (int m : cfg.ablation.disabled_modules)
    if (m < 1 || m > 5) throw ConfigError("disabled module out of range: " + std::to_string(m));
  if (active_modules(cfg).empty()) throw ConfigError("at least one module must stay enabled");
  const auto& s = cfg.train.schedule;
  if (!(s.unit > 0 && s.cap > 0 && s.floor > 0 && s.decay_factor > 0 && s.decay_factor <= 1) || s.decay_every < 1)
    throw ConfigError("invalid learning-rate schedule");
  const auto& a = cfg.train.adam;
  if (!(a.beta1 >= 0 && a.beta1 < 1 && a.beta2 >= 0 && a.beta2 < 1 && a.eps > 0))
    throw ConfigError("invalid Adam hyperparameters");
  if (!(cfg.train.init_scale > 0)) throw ConfigError("init_scale must be > 0");
}

std::vector<ModuleKind> active_modules(const RunConfig& cfg) {
  std::vector<ModuleKind> out;
  for (int m = 1; m <= 5; ++m) {
    if (cfg.ablation.disabled_modules.count(m)) continue;
    if (m == 5 && !cfg.with_knowledge) continue;
    out.push_back(static_cast<ModuleKind>(m));
  }
  return out;
}

// ---------------------------------------------------------------------------
// JSON

namespace {

template <typename V>
void read(const json& j, const char* key, V& out) {
  auto it = j.find(key);
  if (it == j.end()) return;
  try {
    out = it->get<V>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config key '") + key + "': " + e.what());
  }
}

void read_size(const json& j, const char* key, std::size_t& out) {
  auto it = j.find(key);
  if (it == j.end()) return;
  if (!it->is_number_integer() || it->get<long long>() < 0)
    throw ConfigError(std::string("config key '") + key + "' must be a non-negative integer");
  out = it->get<std::size_t>();
}

json dims_json(const Dims& d) {
  return json{{"d_v", d.d_v}, {"d", d.d}, {"d_k", d.d_k}, {"N", d.N}, {"L", d.L}, {"K", d.K}, {"A", d.A}};
}

void read_dims(const json& j, Dims& d) {
  read_size(j, "d_v", d.d_v);
  read_size(j, "d", d.d);
  read_size(j, "d_k", d.d_k);
  read_size(j, "N", d.N);
  read_size(j, "L", d.L);
  read_size(j, "K", d.K);
  read_size(j, "A", d.A);
}

json task_keys(const TaskSpec& s) {
  return json{{"train_count", s.train},
              {"val_count", s.val},
              {"test_count", s.test},
              {"rule_mix", s.rule_mix},
              {"tags", s.tags},
              {"data_seed", s.master_seed},
              {"visual_noise", s.visual_noise},
              {"tag_norm", s.tag_norm},
              {"marker_norm", s.marker_norm},
              {"signature_norm", s.signature_norm},
              {"context_group", s.context_group},
              {"context_threshold", s.context_threshold},
              {"question_norm", s.question_norm},
              {"question_noise", s.question_noise},
              {"knowledge_norm", s.knowledge_norm},
              {"knowledge_noise", s.knowledge_noise}};
}

void read_task_keys(const json& j, TaskSpec& s) {
  read_size(j, "train_count", s.train);
  read_size(j, "val_count", s.val);
  read_size(j, "test_count", s.test);
  read(j, "rule_mix", s.rule_mix);
  read_size(j, "tags", s.tags);
  read(j, "data_seed", s.master_seed);
  read(j, "visual_noise", s.visual_noise);
  read(j, "tag_norm", s.tag_norm);
  read(j, "marker_norm", s.marker_norm);
  read(j, "signature_norm", s.signature_norm);
  read_size(j, "context_group", s.context_group);
  read(j, "context_threshold", s.context_threshold);
  read(j, "question_norm", s.question_norm);
  read(j, "question_noise", s.question_noise);
  read(j, "knowledge_norm", s.knowledge_norm);
  read(j, "knowledge_noise", s.knowledge_noise);
}

void reject_unknown(const json& j, const json& known) {
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!known.contains(it.key())) throw ConfigError("unknown config key '" + it.key() + "'");
}

}  // namespace

json to_json(const TaskSpec& spec) {
  json j = dims_json(spec.dims);
  j.update(task_keys(spec));
  return j;
}

TaskSpec task_spec_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("task spec must be a JSON object");
  TaskSpec s;
  reject_unknown(j, to_json(s));
  read_dims(j, s.dims);
  read_task_keys(j, s);
  return s;
}

json to_json(const RunConfig& c) {
  json j = dims_json(c.dims);
  j["with_knowledge"] = c.with_knowledge;
  j["T"] = c.T;
  j["batch"] = c.train.batch;
  j["epochs"] = c.train.epochs;
  j["seed"] = c.train.seed;
  j["init_scale"] = c.train.init_scale;
  j["lr_unit"] = c.train.schedule.unit;
  j["lr_cap"] = c.train.schedule.cap;
  j["lr_decay_after"] = c.train.schedule.decay_after;
  j["lr_decay_every"] = c.train.schedule.decay_every;
  j["lr_decay_factor"] = c.train.schedule.decay_factor;
  j["lr_floor"] = c.train.schedule.floor;
  j["adam_beta1"] = c.train.adam.beta1;
  j["adam_beta2"] = c.train.adam.beta2;
  j["adam_eps"] = c.train.adam.eps;
  j["disabled_modules"] = std::vector<int>(c.ablation.disabled_modules.begin(), c.ablation.disabled_modules.end());
  j["router"] = to_string(c.ablation.router);
  j["agreements"] = c.ablation.agreements_enabled;
  j["memory"] = c.ablation.memory_enabled;
  j.update(task_keys(c.task));
  return j;
}

RunConfig run_config_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  RunConfig c;
  reject_unknown(j, to_json(c));
  read_dims(j, c.dims);
  read(j, "with_knowledge", c.with_knowledge);
  read_size(j, "T", c.T);
  read_size(j, "batch", c.train.batch);
  read_size(j, "epochs", c.train.epochs);
  read(j, "seed", c.train.seed);
  read(j, "init_scale", c.train.init_scale);
  read(j, "lr_unit", c.train.schedule.unit);
  read(j, "lr_cap", c.train.schedule.cap);
  read_size(j, "lr_decay_after", c.train.schedule.decay_after);
  read_size(j, "lr_decay_every", c.train.schedule.decay_every);
  read(j, "lr_decay_factor", c.train.schedule.decay_factor);
  read(j, "lr_floor", c.train.schedule.floor);
  read(j, "adam_beta1", c.train.adam.beta1);
  read(j, "adam_beta2", c.train.adam.beta2);
  read(j, "adam_eps", c.train.adam.eps);
  std::vector<int> disabled;
  read(j, "disabled_modules", disabled);
  c.ablation.disabled_modules = std::set<int>(disabled.begin(), disabled.end());
  std::string router = to_string(c.ablation.router);
  read(j, "router", router);
  c.ablation.router = router_mode_from_string(router);
  read(j, "agreements", c.ablation.agreements_enabled);
  read(j, "memory", c.ablation.memory_enabled);
  read_task_keys(j, c.task);
  c.task.dims = c.dims;
  validate(c);
  return c;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("config file " + path + " is not valid JSON: " + e.what());
  }
  return run_config_from_json(j);
}

RunConfig tiny_config() {
  RunConfig c;
  c.dims = Dims{12, 8, 6, 5, 4, 3, 6};
  c.T = 2;
  c.task.dims = c.dims;
  c.task.tags = 6;
  c.task.context_group = 2;
  c.task.train = 24;
  c.task.val = 12;
  c.task.test = 12;
  c.train.batch = 4;
  c.train.epochs = 2;
  return c;
}

}  // namespace super
