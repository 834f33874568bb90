// SPDX-License-Identifier: Apache-2.0

#include "super/commands.hpp"

#include <fstream>
#include <functional>
#include <ostream>

#include "super/checkpoint.hpp"
#include "super/gradcheck.hpp"
#include "super/io.hpp"
#include "super/trainer.hpp"

namespace super {

namespace {

/// Maps exceptions to exit codes and prints the message.
int guarded(std::ostream& err, const std::function<int()>& body) {
  try {
    return body();
  } catch (const NumericError& e) {
    err << "numerical failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const nlohmann::json::exception& e) {
    err << "malformed JSON: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  }
}

nlohmann::json matrix_json(const Tensor<double>& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t i = 0; i < m.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (std::size_t j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

void require_directory(const std::filesystem::path& p, const char* what) {
  if (!std::filesystem::is_directory(p)) throw IoError(std::string(what) + " not found: " + p.string());
}

}  // namespace

RunConfig config_or_default(const std::optional<std::filesystem::path>& path) {
  if (!path) {
    RunConfig cfg;
    validate(cfg);
    return cfg;
  }
  return load_run_config(path->string());
}

nlohmann::json trace_to_json(const Instance& instance, const RouteTrace& trace, std::size_t prediction,
                             double threshold) {
  nlohmann::json iterations = nlohmann::json::array();
  for (const StepRecord& r : trace.iterations)
    iterations.push_back({{"G", matrix_json(r.G)}, {"c", matrix_json(r.c)}, {"b", matrix_json(r.b)}});
  nlohmann::json mask = nlohmann::json::array();
  for (const auto& step : discretize_paths(trace, threshold)) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& row : step) rows.push_back(std::vector<bool>(row.begin(), row.end()));
    mask.push_back(std::move(rows));
  }
  return {{"rule", to_string(instance.rule)},
          {"seed", instance.seed},
          {"iterations", std::move(iterations)},
          {"path_vector", trace.path_vector},
          {"prediction", prediction},
          {"label", answer_index(instance)},
          {"threshold", threshold},
          {"mask", std::move(mask)}};
}

std::string path_csv_row(Rule rule, const RouteTrace& trace) {
  std::string row = std::to_string(static_cast<int>(rule));
  for (double g : trace.path_vector) row += "," + format_float9(g);
  return row + "\n";
}

int cmd_gen_data(const GenDataArgs& args, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const RunConfig cfg = config_or_default(args.config);
    const GeneratedDataset generated = generate_dataset(cfg.task);
    write_dataset(generated.dataset, args.out);
    out << "wrote " << generated.dataset.train.size() << "/" << generated.dataset.val.size() << "/"
        << generated.dataset.test.size() << " train/val/test instances to " << args.out.string() << "\n";
    return kExitOk;
  });
}

int cmd_train(const TrainArgs& args, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    RunConfig cfg = config_or_default(args.config);
    if (args.ablation) cfg.ablation = parse_ablation(*args.ablation);
    validate(cfg);
    require_directory(args.data, "dataset directory");
    const Dataset data = load_dataset(args.data);
    TrainOptions options;
    options.out_dir = args.out;
    options.verbose = args.verbose;
    const TrainResult result = train(data, cfg, options);
    if (result.aborted) {
      err << "training aborted (" << result.abort_reason << "); last good checkpoint kept in " << args.out.string()
          << "\n";
      return kExitNumeric;
    }
    out << "best epoch " << result.best_epoch << " val_acc " << result.best_val_acc << " val_loss "
        << result.best_val_loss << "\n";
    return kExitOk;
  });
}

int cmd_eval(const EvalArgs& args, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    Checkpoint ck = load_checkpoint(args.checkpoint);
    require_directory(args.data, "dataset directory");
    const Dataset data = load_dataset(args.data);
    check_data_compatible(ck.config.dims, data.spec.dims);
    const EvalResult r = evaluate(data.split(split_from_string(args.split)), ck.config, ck.params);
    out << to_json(r).dump() << "\n";
    return kExitOk;
  });
}

int cmd_gradcheck(const GradcheckArgs& args, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const RunConfig cfg = args.config ? load_run_config(args.config->string()) : tiny_config();
    const GradcheckReport report = network_gradcheck(cfg, args.seed, 1e-4, args.corrupt);
    bool ok = true;
    for (const ParamCheck& p : report.params) {
      const bool pass = p.max_rel_error <= kGradcheckTolerance;
      ok = ok && pass;
      out << p.name << " " << p.elements << " " << format_float9(p.max_rel_error) << (pass ? " ok" : " FAIL")
          << "\n";
    }
    out << "max_rel_error " << format_float9(report.max_rel_error) << " over " << report.params.size()
        << " parameters (" << report.evaluations << " loss evaluations)\n";
    return ok ? kExitOk : kExitNumeric;
  });
}

int cmd_trace(const TraceArgs& args, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    if (!(args.threshold >= 0.0 && args.threshold <= 1.0))
      throw ConfigError("threshold must lie in [0, 1]");
    Checkpoint ck = load_checkpoint(args.checkpoint);
    require_directory(args.data, "dataset directory");
    const Dataset data = load_dataset(args.data);
    check_data_compatible(ck.config.dims, data.spec.dims);
    const ModelSpec spec = model_spec(ck.config);
    const std::uint64_t rseed = router_seed(ck.config);

    std::string traces;
    std::string csv;
    const auto& instances = data.split(split_from_string(args.split));
    for (const Instance& inst : instances) {
      Tape<float> tape;
      BoundParams<float> bound(tape, ck.params);
      const Forward<float> f = forward(tape, bound, spec, inst, rseed);
      traces += trace_to_json(inst, f.trace, argmax(f.logits.value()), args.threshold).dump() + "\n";
      csv += path_csv_row(inst.rule, f.trace);
    }
    std::filesystem::create_directories(args.out);
    write_file(args.out / "traces.jsonl", traces);
    write_file(args.out / "paths.csv", csv);
    out << "wrote " << instances.size() << " traces (path length " << spec.M() * spec.M() * spec.T << ") to "
        << args.out.string() << "\n";
    return kExitOk;
  });
}

}  // namespace super
