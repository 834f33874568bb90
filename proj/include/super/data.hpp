// SPDX-License-Identifier: Apache-2.0
//
// Synthetic planted-rule VQA task.
//
//   Recognition  one marked capsule carries tag t; answer = t.
//   Contextual   a group of capsules shares a signature (pairwise cosine above
//                the planted threshold); answer = majority tag inside the group.
//                A distractor tag outnumbers it among the remaining capsules.
//   Knowledge    one marked capsule carries tag t; the facts K pair tags with
//                answers drawn fresh per instance, so the answer is reachable
//                only through the fact whose key is t.

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "super/config.hpp"
#include "super/tensor.hpp"

namespace super {

struct Instance {
  Rule rule = Rule::Recognition;
  std::uint64_t seed = 0;
  Matrix F;       // d_v x N raw visual capsules
  Matrix Qhat;    // d x L word features
  Matrix Kraw;    // d_k x K knowledge facts
  Matrix labels;  // A x 1 soft targets

  bool operator==(const Instance&) const = default;
};

/// Generator internals before noise; enough to recompute the answer.
struct PlantedState {
  Rule rule = Rule::Recognition;
  std::optional<std::size_t> designated;     // marked capsule (Recognition, Knowledge)
  std::vector<int> capsule_tags;              // -1 when a capsule carries no tag
  std::vector<std::size_t> group;             // contextual group members
  std::vector<std::size_t> fact_tags;         // key tag of each fact column
  std::vector<std::size_t> fact_answers;      // answer stored in each fact column
};

/// Fixed embedding tables derived from the task seed.
struct Vocabulary {
  std::vector<std::vector<double>> tags;         // tags x d_v
  std::vector<double> marker;                    // d_v
  std::vector<std::vector<double>> rule_words;   // 3 x d
  std::vector<std::vector<double>> fact_keys;    // tags x d_k
  std::vector<std::vector<double>> fact_values;  // A x d_k
};

Vocabulary make_vocabulary(const TaskSpec& spec);

struct GeneratedInstance {
  Instance instance;
  PlantedState planted;
};

GeneratedInstance generate_instance(const TaskSpec& spec, const Vocabulary& vocab, Rule rule, std::uint64_t seed);

/// The unique correct answer index implied by the planted state.
std::size_t oracle_label(const PlantedState& planted);

/// Index of the largest label entry (first on ties).
std::size_t answer_index(const Instance& instance);

/// Rule for each position of a split: counts follow `mix` by largest
/// remainder (within one instance of count * p), order shuffled by `seed`.
std::vector<Rule> rule_schedule(std::size_t count, const std::array<double, 3>& mix, std::uint64_t seed);

enum class Split { Train = 0, Val = 1, Test = 2 };
std::string to_string(Split split);
Split split_from_string(const std::string& s);

struct Dataset {
  TaskSpec spec;
  std::vector<Instance> train;
  std::vector<Instance> val;
  std::vector<Instance> test;

  const std::vector<Instance>& split(Split s) const;
};

struct GeneratedDataset {
  Dataset dataset;
  std::vector<PlantedState> train_planted, val_planted, test_planted;
};

GeneratedDataset generate_dataset(const TaskSpec& spec);

// File format: manifest.json plus {train,val,test}.jsonl. Floats use 9
// significant digits.
std::string instance_to_jsonl(const Instance& instance);
Instance instance_from_json(const nlohmann::json& j, const Dims& dims);
std::string split_to_jsonl(const std::vector<Instance>& instances);

void write_dataset(const Dataset& dataset, const std::filesystem::path& dir);
/// Verifies manifest checksums and instance shapes.
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace super
