// SPDX-License-Identifier: Apache-2.0
//
// Drives the installed `super` binary end to end on the tiny config.

#include <gtest/gtest.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <sys/wait.h>

#include "json.hpp"
#include "super/config.hpp"
#include "super/network.hpp"

namespace fs = std::filesystem;

namespace {

struct Result {
  int code = -1;
  std::string out;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

fs::path scratch() {
  static const fs::path dir = [] {
    const fs::path d = fs::temp_directory_path() / "super_cli_test";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

Result super_cmd(const std::string& args) {
  const fs::path log = scratch() / "last_stdout.txt";
  const std::string cmd = std::string(SUPER_BIN) + " " + args + " > " + log.string() + " 2> " +
                          (scratch() / "last_stderr.txt").string();
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(log)};
}

fs::path tiny_config_file() {
  const fs::path p = scratch() / "tiny.json";
  if (!fs::exists(p)) std::ofstream(p) << super::to_json(super::tiny_config()).dump(2);
  return p;
}

/// Generated once and shared: dataset plus a trained checkpoint.
struct Artifacts {
  fs::path data = scratch() / "data";
  fs::path run = scratch() / "run";
  Artifacts() {
    const std::string cfg = tiny_config_file().string();
    EXPECT_EQ(super_cmd("gen-data --config " + cfg + " --out " + data.string()).code, 0);
    EXPECT_EQ(super_cmd("train --config " + cfg + " --data " + data.string() + " --out " + run.string()).code, 0);
  }
};

const Artifacts& artifacts() {
  static const Artifacts a;
  return a;
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) out.push_back(line);
  return out;
}

}  // namespace

TEST(GenData, SameConfigGivesIdenticalFiles) {
  const std::string cfg = tiny_config_file().string();
  const fs::path a = scratch() / "gen_a", b = scratch() / "gen_b";
  ASSERT_EQ(super_cmd("gen-data --config " + cfg + " --out " + a.string()).code, 0);
  ASSERT_EQ(super_cmd("gen-data --config " + cfg + " --out " + b.string()).code, 0);
  std::size_t files = 0;
  for (const auto& entry : fs::directory_iterator(a)) {
    ++files;
    EXPECT_EQ(slurp(entry.path()), slurp(b / entry.path().filename())) << entry.path().filename();
  }
  EXPECT_GT(files, 0u);
}

TEST(GenData, InvalidConfigExitsWithValidationCode) {
  auto j = super::to_json(super::tiny_config());
  j["A"] = 3;
  const fs::path p = scratch() / "bad.json";
  std::ofstream(p) << j.dump();
  EXPECT_EQ(super_cmd("gen-data --config " + p.string() + " --out " + (scratch() / "bad").string()).code, 1);
  EXPECT_EQ(super_cmd("gen-data --config " + (scratch() / "missing.json").string() + " --out x").code, 1);
}

TEST(Train, MissingDatasetFails) {
  EXPECT_NE(super_cmd("train --config " + tiny_config_file().string() + " --data " + (scratch() / "nowhere").string() +
                      " --out " + (scratch() / "r").string())
                .code,
            0);
}

TEST(Train, UnknownAblationIsRejected) {
  const auto& a = artifacts();
  EXPECT_EQ(super_cmd("train --config " + tiny_config_file().string() + " --data " + a.data.string() + " --out " +
                      (scratch() / "r_bad").string() + " --ablation router=sometimes")
                .code,
            1);
}

TEST(Train, WritesCheckpointAndMetrics) {
  const auto& a = artifacts();
  EXPECT_TRUE(fs::exists(a.run / "checkpoint.json"));
  EXPECT_TRUE(fs::exists(a.run / "checkpoint.bin"));
  EXPECT_EQ(lines_of(slurp(a.run / "metrics.jsonl")).size(), super::tiny_config().train.epochs);
}

TEST(Eval, PrintsDeterministicJson) {
  const auto& a = artifacts();
  const std::string args = "eval --checkpoint " + a.run.string() + " --data " + a.data.string();
  const Result r1 = super_cmd(args), r2 = super_cmd(args);
  ASSERT_EQ(r1.code, 0);
  EXPECT_EQ(r1.out, r2.out);
  const auto j = nlohmann::json::parse(r1.out);
  EXPECT_EQ(j.at("count").get<std::size_t>(), super::tiny_config().task.test);
  const double acc = j.at("overall").get<double>();
  EXPECT_GE(acc, 0.0);
  EXPECT_LE(acc, 1.0);
}

TEST(Eval, MismatchedDataNamesTensor) {
  const auto& a = artifacts();
  auto j = super::to_json(super::tiny_config());
  j["d_v"] = 14;
  const fs::path cfg = scratch() / "wide.json", data = scratch() / "wide_data";
  std::ofstream(cfg) << j.dump();
  ASSERT_EQ(super_cmd("gen-data --config " + cfg.string() + " --out " + data.string()).code, 0);
  EXPECT_EQ(super_cmd("eval --checkpoint " + a.run.string() + " --data " + data.string()).code, 1);
  EXPECT_NE(slurp(scratch() / "last_stderr.txt").find("proj.W_proj"), std::string::npos);
}

TEST(Gradcheck, ListsEveryParameterOnce) {
  const Result r = super_cmd("gradcheck");
  const auto shapes = super::parameter_shapes(super::model_spec(super::tiny_config()));
  const auto lines = lines_of(r.out);
  ASSERT_EQ(lines.size(), shapes.size() + 1);
  std::set<std::string> seen;
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    const std::string name = lines[i].substr(0, lines[i].find(' '));
    EXPECT_EQ(name, shapes[i].first);
    seen.insert(name);
  }
  EXPECT_EQ(seen.size(), shapes.size());
  EXPECT_EQ(lines.back().rfind("max_rel_error", 0), 0u);
}

TEST(Gradcheck, CorruptedGradientIsCaught) {
  const Result r = super_cmd("gradcheck --corrupt-gradient 0.01");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.out.find("FAIL"), std::string::npos);
}

TEST(Trace, CsvRowsHoldRuleAndFullPathVector) {
  const auto& a = artifacts();
  const fs::path out = scratch() / "trace";
  ASSERT_EQ(super_cmd("trace --checkpoint " + a.run.string() + " --data " + a.data.string() + " --out " + out.string())
                .code,
            0);
  const super::RunConfig cfg = super::tiny_config();
  const std::size_t M = super::model_spec(cfg).M();
  const auto rows = lines_of(slurp(out / "paths.csv"));
  ASSERT_EQ(rows.size(), cfg.task.test);
  for (const auto& row : rows) EXPECT_EQ(static_cast<std::size_t>(std::count(row.begin(), row.end(), ',')), M * M * cfg.T);
  const auto traces = lines_of(slurp(out / "traces.jsonl"));
  ASSERT_EQ(traces.size(), cfg.task.test);
  const auto first = nlohmann::json::parse(traces.front());
  EXPECT_EQ(first.at("path_vector").size(), M * M * cfg.T);
  EXPECT_EQ(first.at("mask").size(), cfg.T);
}

TEST(Trace, ThresholdOneMasksEverything) {
  const auto& a = artifacts();
  const fs::path out = scratch() / "trace_one";
  ASSERT_EQ(super_cmd("trace --checkpoint " + a.run.string() + " --data " + a.data.string() + " --out " + out.string() +
                      " --threshold 1.0")
                .code,
            0);
  for (const auto& line : lines_of(slurp(out / "traces.jsonl")))
    for (const auto& step : nlohmann::json::parse(line).at("mask"))
      for (const auto& row : step)
        for (const auto& bit : row) EXPECT_FALSE(bit.get<bool>());
  EXPECT_EQ(super_cmd("trace --checkpoint " + a.run.string() + " --data " + a.data.string() + " --out " + out.string() +
                      " --threshold 1.5")
                .code,
            1);
}

TEST(Trace, RepeatedRunsAreIdentical) {
  const auto& a = artifacts();
  const fs::path x = scratch() / "trace_x", y = scratch() / "trace_y";
  for (const auto& out : {x, y})
    ASSERT_EQ(super_cmd("trace --checkpoint " + a.run.string() + " --data " + a.data.string() + " --out " + out.string())
                  .code,
              0);
  EXPECT_EQ(slurp(x / "paths.csv"), slurp(y / "paths.csv"));
  EXPECT_EQ(slurp(x / "traces.jsonl"), slurp(y / "traces.jsonl"));
}
