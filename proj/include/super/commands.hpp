// SPDX-License-Identifier: Apache-2.0
//
// Implementations behind the `super` command-line subcommands. Each returns a
// process exit code: 0 success, 1 validation error, 2 numerical failure.

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>

#include "super/config.hpp"
#include "super/data.hpp"
#include "super/network.hpp"

namespace super {

enum ExitCode : int { kExitOk = 0, kExitValidation = 1, kExitNumeric = 2 };

struct GenDataArgs {
  std::optional<std::filesystem::path> config;
  std::filesystem::path out;
};

struct TrainArgs {
  std::optional<std::filesystem::path> config;
  std::filesystem::path data;
  std::filesystem::path out;
  std::optional<std::string> ablation;
  bool verbose = false;
};

struct EvalArgs {
  std::filesystem::path checkpoint;
  std::filesystem::path data;
  std::string split = "test";
};

struct GradcheckArgs {
  std::optional<std::filesystem::path> config;  // default: tiny config
  std::uint64_t seed = 1;
  double corrupt = 0.0;  // test hook: offsets one analytic gradient
};

struct TraceArgs {
  std::filesystem::path checkpoint;
  std::filesystem::path data;
  std::filesystem::path out;
  std::string split = "test";
  double threshold = 0.6;
};

int cmd_gen_data(const GenDataArgs& args, std::ostream& out, std::ostream& err);
int cmd_train(const TrainArgs& args, std::ostream& out, std::ostream& err);
int cmd_eval(const EvalArgs& args, std::ostream& out, std::ostream& err);
int cmd_gradcheck(const GradcheckArgs& args, std::ostream& out, std::ostream& err);
int cmd_trace(const TraceArgs& args, std::ostream& out, std::ostream& err);

/// Loads a config file, or the defaults when no path is given.
RunConfig config_or_default(const std::optional<std::filesystem::path>& path);

/// One traces.jsonl line.
nlohmann::json trace_to_json(const Instance& instance, const RouteTrace& trace, std::size_t prediction,
                             double threshold);
/// One paths.csv row: rule id then M*M*T gate values.
std::string path_csv_row(Rule rule, const RouteTrace& trace);

}  // namespace super
