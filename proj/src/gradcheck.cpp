// SPDX-License-Identifier: Apache-2.0

#include "super/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "super/data.hpp"
#include "super/io.hpp"
#include "super/network.hpp"

namespace super {

double relative_error(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
}

namespace {

double evaluate_loss(const LossFn& f, ParamStore<double>& params) {
  Tape<double> tape;
  BoundParams<double> bound(tape, params);
  return f(tape, bound).value()[0];
}

}  // namespace

GradcheckReport finite_diff_check(const LossFn& f, ParamStore<double>& params, double h, double corrupt) {
  params.zero_grad();
  {
    Tape<double> tape;
    BoundParams<double> bound(tape, params);
    const Var<double> loss = f(tape, bound);
    tape.backward(loss);
  }
  GradcheckReport report;
  const double base = evaluate_loss(f, params);
  if (evaluate_loss(f, params) != base) throw NumericError("finite_diff_check: loss is not deterministic");
  report.evaluations = 2;

  bool first = true;
  for (auto& p : params.items()) {
    ParamCheck check{p.name, p.value.numel(), 0.0};
    for (std::size_t i = 0; i < p.value.numel(); ++i) {
      const double saved = p.value[i];
      p.value[i] = saved + h;
      const double up = evaluate_loss(f, params);
      p.value[i] = saved - h;
      const double down = evaluate_loss(f, params);
      p.value[i] = saved;
      report.evaluations += 2;
      const double numeric = (up - down) / (2.0 * h);
      const double analytic = p.grad[i] + (first ? corrupt : 0.0);
      check.max_rel_error = std::max(check.max_rel_error, relative_error(analytic, numeric));
    }
    first = false;
    report.max_rel_error = std::max(report.max_rel_error, check.max_rel_error);
    report.params.push_back(std::move(check));
  }
  return report;
}

GradcheckReport network_gradcheck(const RunConfig& cfg, std::uint64_t seed, double h, double corrupt) {
  validate(cfg);
  const ModelSpec spec = model_spec(cfg);
  ParamStore<double> params = init_params(spec, seed, cfg.train.init_scale).cast<double>();

  const Vocabulary vocab = make_vocabulary(cfg.task);
  std::vector<Instance> batch;
  for (Rule rule : kAllRules) {
    if (rule == Rule::Knowledge && !spec.uses_knowledge()) continue;
    batch.push_back(generate_instance(cfg.task, vocab, rule, derive_seed(seed, static_cast<std::uint64_t>(rule))).instance);
  }
  const std::uint64_t rseed = derive_seed(seed, 0x47u);
  const LossFn loss = [&](Tape<double>& tape, const BoundParams<double>& bound) {
    std::vector<Var<double>> losses;
    for (const Instance& inst : batch) losses.push_back(forward(tape, bound, spec, inst, rseed).loss);
    return add_n<double>(losses);
  };
  return finite_diff_check(loss, params, h, corrupt);
}

}  // namespace super
