// SPDX-License-Identifier: Apache-2.0

#include "super/data.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

#include "super/io.hpp"

namespace super {

using nlohmann::json;

namespace {

constexpr std::uint64_t kVocabStream = 0x766F636162ull;
constexpr std::uint64_t kRuleStream = 0x72756C6573ull;

std::vector<double> random_direction(Rng& rng, std::size_t n, double norm) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> v(n);
  double s = 0;
  do {
    s = 0;
    for (auto& x : v) {
      x = normal(rng);
      s += x * x;
    }
  } while (s == 0);
  const double k = norm / std::sqrt(s);
  for (auto& x : v) x *= k;
  return v;
}

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  return ab / std::sqrt(aa * bb);
}

void add_scaled(std::vector<double>& dst, const std::vector<double>& src, double k = 1.0) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += k * src[i];
}

std::size_t uniform_index(Rng& rng, std::size_t n) {
  return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

/// Uniform draw from [0, n) excluding `banned`.
std::size_t draw_excluding(Rng& rng, std::size_t n, const std::vector<std::size_t>& banned) {
  std::vector<std::size_t> pool;
  for (std::size_t i = 0; i < n; ++i)
    if (std::find(banned.begin(), banned.end(), i) == banned.end()) pool.push_back(i);
  if (pool.empty()) throw ConfigError("tag vocabulary too small for the requested draw");
  return pool[uniform_index(rng, pool.size())];
}

/// Columns of `cols` (each of length rows) into a float matrix, plus noise.
Matrix to_matrix(const std::vector<std::vector<double>>& cols, std::size_t rows, double noise, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix m(Shape{rows, cols.size()});
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols.size(); ++j)
      m(i, j) = static_cast<float>(cols[j][i] + (noise > 0 ? noise * normal(rng) : 0.0));
  return m;
}

}  // namespace

Vocabulary make_vocabulary(const TaskSpec& spec) {
  validate(spec);
  Rng rng(derive_seed(spec.master_seed, kVocabStream));
  const Dims& d = spec.dims;
  Vocabulary v;
  for (std::size_t t = 0; t < spec.tags; ++t) v.tags.push_back(random_direction(rng, d.d_v, spec.tag_norm));
  v.marker = random_direction(rng, d.d_v, spec.marker_norm);
  for (int r = 0; r < 3; ++r) v.rule_words.push_back(random_direction(rng, d.d, spec.question_norm));
  for (std::size_t t = 0; t < spec.tags; ++t) v.fact_keys.push_back(random_direction(rng, d.d_k, 1.0));
  for (std::size_t a = 0; a < d.A; ++a) v.fact_values.push_back(random_direction(rng, d.d_k, 1.0));
  for (std::size_t i = 0; i < v.tags.size(); ++i)
    for (std::size_t j = i + 1; j < v.tags.size(); ++j)
      if (v.tags[i] == v.tags[j]) throw ConfigError("tag vectors are not pairwise distinct");
  return v;
}

GeneratedInstance generate_instance(const TaskSpec& spec, const Vocabulary& vocab, Rule rule, std::uint64_t seed) {
  const Dims& d = spec.dims;
  Rng rng(seed);
  PlantedState planted;
  planted.rule = rule;
  planted.capsule_tags.assign(d.N, -1);

  std::vector<std::vector<double>> capsules(d.N, std::vector<double>(d.d_v, 0.0));

  if (rule == Rule::Recognition || rule == Rule::Knowledge) {
    const std::size_t p = uniform_index(rng, d.N);
    const std::size_t tag = uniform_index(rng, spec.tags);
    planted.designated = p;
    planted.capsule_tags[p] = static_cast<int>(tag);
    add_scaled(capsules[p], vocab.tags[tag]);
    add_scaled(capsules[p], vocab.marker);
  } else {
    const std::size_t g = spec.context_group;
    const std::size_t majority = g / 2 + 1;
    std::vector<std::size_t> order(d.N);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    planted.group.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(g));
    std::sort(planted.group.begin(), planted.group.end());

    const std::size_t winner = uniform_index(rng, spec.tags);
    std::vector<std::size_t> used{winner};
    for (std::size_t k = 0; k < g; ++k) {
      std::size_t tag = winner;
      if (k >= majority) {
        tag = draw_excluding(rng, spec.tags, used);
        used.push_back(tag);
      }
      planted.capsule_tags[order[k]] = static_cast<int>(tag);
    }
    const std::size_t distractor = draw_excluding(rng, spec.tags, used);
    for (std::size_t k = g; k < d.N; ++k) {
      const std::size_t tag =
          (k - g) < majority + 1 ? distractor : draw_excluding(rng, spec.tags, {winner, distractor});
      planted.capsule_tags[order[k]] = static_cast<int>(tag);
    }

    // Shared signature for the group, private signatures elsewhere; resample
    // until the noiseless capsules respect the planted similarity threshold.
    for (int attempt = 0;; ++attempt) {
      std::vector<std::vector<double>> trial(d.N);
      const auto shared = random_direction(rng, d.d_v, spec.signature_norm);
      for (std::size_t i = 0; i < d.N; ++i) {
        const bool member = std::binary_search(planted.group.begin(), planted.group.end(), i);
        trial[i] = member ? shared : random_direction(rng, d.d_v, spec.signature_norm);
        add_scaled(trial[i], vocab.tags[static_cast<std::size_t>(planted.capsule_tags[i])]);
      }
      bool ok = true;
      for (std::size_t i = 0; i < d.N && ok; ++i)
        for (std::size_t j = i + 1; j < d.N && ok; ++j) {
          const bool both = std::binary_search(planted.group.begin(), planted.group.end(), i) &&
                            std::binary_search(planted.group.begin(), planted.group.end(), j);
          const double c = cosine(trial[i], trial[j]);
          ok = both ? c > spec.context_threshold : c < spec.context_threshold;
        }
      if (ok) {
        capsules = std::move(trial);
        break;
      }
      if (attempt > 1000) throw ConfigError("cannot plant a contextual group at this threshold; raise signature_norm");
    }
  }

  // Facts: K distinct tags with fresh answers. The knowledge rule includes the
  // designated tag among them.
  std::vector<std::size_t> fact_tags(spec.tags);
  std::iota(fact_tags.begin(), fact_tags.end(), 0);
  std::shuffle(fact_tags.begin(), fact_tags.end(), rng);
  fact_tags.resize(d.K);
  if (rule == Rule::Knowledge) {
    const auto tag = static_cast<std::size_t>(planted.capsule_tags[*planted.designated]);
    if (std::find(fact_tags.begin(), fact_tags.end(), tag) == fact_tags.end())
      fact_tags[uniform_index(rng, d.K)] = tag;
  }
  planted.fact_tags = fact_tags;
  std::vector<std::vector<double>> facts(d.K, std::vector<double>(d.d_k, 0.0));
  for (std::size_t j = 0; j < d.K; ++j) {
    const std::size_t answer = uniform_index(rng, d.A);
    planted.fact_answers.push_back(answer);
    add_scaled(facts[j], vocab.fact_keys[fact_tags[j]], spec.knowledge_norm);
    add_scaled(facts[j], vocab.fact_values[answer], spec.knowledge_norm);
  }

  // Question: the rule word at a random position among filler words.
  std::vector<std::vector<double>> words(d.L);
  const std::size_t rule_pos = uniform_index(rng, d.L);
  for (std::size_t w = 0; w < d.L; ++w)
    words[w] = w == rule_pos ? vocab.rule_words[static_cast<int>(rule)] : std::vector<double>(d.d, 0.0);

  GeneratedInstance out;
  out.planted = planted;
  Instance& inst = out.instance;
  inst.rule = rule;
  inst.seed = seed;
  inst.F = to_matrix(capsules, d.d_v, spec.visual_noise, rng);
  inst.Qhat = to_matrix(words, d.d, spec.question_noise, rng);
  inst.Kraw = to_matrix(facts, d.d_k, spec.knowledge_noise, rng);
  inst.labels = Matrix(Shape{d.A, 1});
  inst.labels[oracle_label(planted)] = 1.0f;
  return out;
}

std::size_t oracle_label(const PlantedState& p) {
  switch (p.rule) {
    case Rule::Recognition:
      return static_cast<std::size_t>(p.capsule_tags.at(p.designated.value()));
    case Rule::Contextual: {
      std::map<int, std::size_t> counts;
      for (std::size_t i : p.group) ++counts[p.capsule_tags.at(i)];
      auto best = std::max_element(counts.begin(), counts.end(),
                                   [](const auto& a, const auto& b) { return a.second < b.second; });
      return static_cast<std::size_t>(best->first);
    }
    case Rule::Knowledge: {
      const auto tag = static_cast<std::size_t>(p.capsule_tags.at(p.designated.value()));
      for (std::size_t j = 0; j < p.fact_tags.size(); ++j)
        if (p.fact_tags[j] == tag) return p.fact_answers.at(j);
      throw std::logic_error("knowledge instance without a fact for the designated tag");
    }
  }
  throw std::logic_error("unknown rule");
}

std::size_t answer_index(const Instance& instance) {
  const auto data = instance.labels.data();
  return static_cast<std::size_t>(std::max_element(data.begin(), data.end()) - data.begin());
}

std::vector<Rule> rule_schedule(std::size_t count, const std::array<double, 3>& mix, std::uint64_t seed) {
  std::array<std::size_t, 3> n{};
  std::array<double, 3> remainder{};
  std::size_t assigned = 0;
  for (int r = 0; r < 3; ++r) {
    const double exact = static_cast<double>(count) * mix[r];
    n[r] = static_cast<std::size_t>(std::floor(exact));
    remainder[r] = exact - static_cast<double>(n[r]);
    assigned += n[r];
  }
  while (assigned < count) {
    int best = 0;
    for (int r = 1; r < 3; ++r)
      if (remainder[r] > remainder[best]) best = r;
    ++n[best];
    remainder[best] = -1;
    ++assigned;
  }
  std::vector<Rule> rules;
  for (int r = 0; r < 3; ++r) rules.insert(rules.end(), n[r], static_cast<Rule>(r));
  Rng rng(seed);
  std::shuffle(rules.begin(), rules.end(), rng);
  return rules;
}

std::string to_string(Split split) {
  switch (split) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "train";
}

Split split_from_string(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "val") return Split::Val;
  if (s == "test") return Split::Test;
  throw ConfigError("unknown split '" + s + "' (expected train, val or test)");
}

const std::vector<Instance>& Dataset::split(Split s) const {
  switch (s) {
    case Split::Train: return train;
    case Split::Val: return val;
    case Split::Test: return test;
  }
  return train;
}

GeneratedDataset generate_dataset(const TaskSpec& spec) {
  const Vocabulary vocab = make_vocabulary(spec);
  GeneratedDataset out;
  out.dataset.spec = spec;
  const std::array<std::size_t, 3> counts = {spec.train, spec.val, spec.test};
  std::array<std::vector<Instance>*, 3> targets = {&out.dataset.train, &out.dataset.val, &out.dataset.test};
  std::array<std::vector<PlantedState>*, 3> planted = {&out.train_planted, &out.val_planted, &out.test_planted};
  for (std::size_t s = 0; s < 3; ++s) {
    const std::uint64_t split_seed = derive_seed(spec.master_seed, s + 1);
    const auto rules = rule_schedule(counts[s], spec.rule_mix, derive_seed(split_seed, kRuleStream));
    for (std::size_t i = 0; i < counts[s]; ++i) {
      auto g = generate_instance(spec, vocab, rules[i], derive_seed(split_seed, i));
      targets[s]->push_back(std::move(g.instance));
      planted[s]->push_back(std::move(g.planted));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Serialization

namespace {

void append_matrix(std::string& out, const Matrix& m) {
  out += '[';
  for (std::size_t i = 0; i < m.rows(); ++i) {
    if (i) out += ',';
    out += '[';
    for (std::size_t j = 0; j < m.cols(); ++j) {
      if (j) out += ',';
      out += format_float9(m(i, j));
    }
    out += ']';
  }
  out += ']';
}

Matrix matrix_from_json(const json& j, std::size_t rows, std::size_t cols, const char* field) {
  if (!j.is_array() || j.size() != rows)
    throw ShapeError(std::string("dataset field '") + field + "' must have " + std::to_string(rows) + " rows");
  Matrix m(Shape{rows, cols});
  for (std::size_t i = 0; i < rows; ++i) {
    const json& row = j[i];
    if (!row.is_array() || row.size() != cols)
      throw ShapeError(std::string("dataset field '") + field + "' must have " + std::to_string(cols) + " columns");
    for (std::size_t c = 0; c < cols; ++c) m(i, c) = static_cast<float>(row[c].get<double>());
  }
  return m;
}

}  // namespace

std::string instance_to_jsonl(const Instance& inst) {
  std::string out = "{\"rule\":\"" + to_string(inst.rule) + "\",\"seed\":" + std::to_string(inst.seed) + ",\"F\":";
  append_matrix(out, inst.F);
  out += ",\"Qhat\":";
  append_matrix(out, inst.Qhat);
  out += ",\"Kraw\":";
  append_matrix(out, inst.Kraw);
  out += ",\"labels\":[";
  for (std::size_t i = 0; i < inst.labels.numel(); ++i) {
    if (i) out += ',';
    out += format_float9(inst.labels[i]);
  }
  out += "]}\n";
  return out;
}

Instance instance_from_json(const json& j, const Dims& d) {
  Instance inst;
  inst.rule = rule_from_string(j.at("rule").get<std::string>());
  inst.seed = j.at("seed").get<std::uint64_t>();
  inst.F = matrix_from_json(j.at("F"), d.d_v, d.N, "F");
  inst.Qhat = matrix_from_json(j.at("Qhat"), d.d, d.L, "Qhat");
  inst.Kraw = matrix_from_json(j.at("Kraw"), d.d_k, d.K, "Kraw");
  const json& labels = j.at("labels");
  if (!labels.is_array() || labels.size() != d.A)
    throw ShapeError("dataset field 'labels' must have " + std::to_string(d.A) + " entries");
  inst.labels = Matrix(Shape{d.A, 1});
  bool positive = false;
  for (std::size_t a = 0; a < d.A; ++a) {
    const double v = labels[a].get<double>();
    if (!(v >= 0 && v <= 1)) throw ShapeError("label outside [0, 1]");
    positive = positive || v > 0;
    inst.labels[a] = static_cast<float>(v);
  }
  if (!positive) throw ShapeError("instance without a positive label");
  return inst;
}

std::string split_to_jsonl(const std::vector<Instance>& instances) {
  std::string out;
  for (const auto& inst : instances) out += instance_to_jsonl(inst);
  return out;
}

void write_dataset(const Dataset& dataset, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  json manifest;
  manifest["format"] = "super-dataset";
  manifest["version"] = 1;
  manifest["spec"] = to_json(dataset.spec);
  for (Split s : {Split::Train, Split::Val, Split::Test}) {
    const std::string name = to_string(s);
    const std::string body = split_to_jsonl(dataset.split(s));
    write_file(dir / (name + ".jsonl"), body);
    manifest["splits"][name] = {{"file", name + ".jsonl"}, {"count", dataset.split(s).size()}, {"sha256", sha256_hex(body)}};
  }
  write_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

Dataset load_dataset(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  if (!std::filesystem::exists(manifest_path)) throw IoError("dataset manifest not found: " + manifest_path.string());
  json manifest;
  try {
    manifest = json::parse(read_file(manifest_path));
  } catch (const json::exception& e) {
    throw IoError("dataset manifest is not valid JSON: " + std::string(e.what()));
  }
  Dataset ds;
  ds.spec = task_spec_from_json(manifest.at("spec"));
  validate(ds.spec);
  std::array<std::vector<Instance>*, 3> targets = {&ds.train, &ds.val, &ds.test};
  for (Split s : {Split::Train, Split::Val, Split::Test}) {
    const json& entry = manifest.at("splits").at(to_string(s));
    const std::string body = read_file(dir / entry.at("file").get<std::string>());
    if (sha256_hex(body) != entry.at("sha256").get<std::string>())
      throw IoError("checksum mismatch for split " + to_string(s));
    std::istringstream lines(body);
    std::string line;
    auto& out = *targets[static_cast<int>(s)];
    while (std::getline(lines, line)) {
      if (line.empty()) continue;
      out.push_back(instance_from_json(json::parse(line), ds.spec.dims));
    }
    if (out.size() != entry.at("count").get<std::size_t>())
      throw IoError("instance count mismatch for split " + to_string(s));
  }
  return ds;
}

}  // namespace super
