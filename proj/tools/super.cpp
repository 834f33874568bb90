// SPDX-License-Identifier: Apache-2.0
//
// super: dataset generation, training, evaluation, gradient checking and
// route-trace export.

#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "super/commands.hpp"

int main(int argc, char** argv) {
  using namespace super;
  CLI::App app{"Modular capsule routing network on a planted-rule VQA task"};
  app.require_subcommand(1);

  GenDataArgs gen;
  std::string gen_config, gen_out;
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate the synthetic dataset");
  gen_cmd->add_option("--config", gen_config, "Run config JSON (defaults when omitted)");
  gen_cmd->add_option("--out", gen_out, "Output directory")->required();

  TrainArgs tr;
  std::string tr_config, tr_data, tr_out, tr_ablation;
  auto* train_cmd = app.add_subcommand("train", "Train and keep the best validation checkpoint");
  train_cmd->add_option("--config", tr_config, "Run config JSON (defaults when omitted)");
  train_cmd->add_option("--data", tr_data, "Dataset directory")->required();
  train_cmd->add_option("--out", tr_out, "Output directory")->required();
  train_cmd->add_option("--ablation", tr_ablation, "e.g. router=random,agreements=off,memory=off,drop=R5");
  train_cmd->add_flag("--verbose", tr.verbose, "Per-epoch progress on stderr");

  EvalArgs ev;
  std::string ev_ck, ev_data;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint; prints JSON");
  eval_cmd->add_option("--checkpoint", ev_ck, "Checkpoint directory")->required();
  eval_cmd->add_option("--data", ev_data, "Dataset directory")->required();
  eval_cmd->add_option("--split", ev.split, "train, val or test")->check(CLI::IsMember({"train", "val", "test"}));

  GradcheckArgs gc;
  std::string gc_config;
  auto* gc_cmd = app.add_subcommand("gradcheck", "Finite-difference check of every parameter gradient (64-bit)");
  gc_cmd->add_option("--config", gc_config, "Run config JSON (tiny config when omitted)");
  gc_cmd->add_option("--seed", gc.seed, "Parameter and instance seed");
  gc_cmd->add_option("--corrupt-gradient", gc.corrupt, "Offset added to one analytic gradient")
      ->group("");  // hidden test hook

  TraceArgs tc;
  std::string tc_ck, tc_data, tc_out;
  auto* trace_cmd = app.add_subcommand("trace", "Export route traces and path vectors");
  trace_cmd->add_option("--checkpoint", tc_ck, "Checkpoint directory")->required();
  trace_cmd->add_option("--data", tc_data, "Dataset directory")->required();
  trace_cmd->add_option("--out", tc_out, "Output directory")->required();
  trace_cmd->add_option("--split", tc.split, "train, val or test")->check(CLI::IsMember({"train", "val", "test"}));
  trace_cmd->add_option("--threshold", tc.threshold, "Gate threshold for path masks");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitValidation;
  }

  if (*gen_cmd) {
    if (!gen_config.empty()) gen.config = gen_config;
    gen.out = gen_out;
    return cmd_gen_data(gen, std::cout, std::cerr);
  }
  if (*train_cmd) {
    if (!tr_config.empty()) tr.config = tr_config;
    if (!tr_ablation.empty()) tr.ablation = tr_ablation;
    tr.data = tr_data;
    tr.out = tr_out;
    return cmd_train(tr, std::cout, std::cerr);
  }
  if (*eval_cmd) {
    ev.checkpoint = ev_ck;
    ev.data = ev_data;
    return cmd_eval(ev, std::cout, std::cerr);
  }
  if (*gc_cmd) {
    if (!gc_config.empty()) gc.config = gc_config;
    return cmd_gradcheck(gc, std::cout, std::cerr);
  }
  tc.checkpoint = tc_ck;
  tc.data = tc_data;
  tc.out = tc_out;
  return cmd_trace(tc, std::cout, std::cerr);
}
