// SPDX-License-Identifier: Apache-2.0
//
// Central-difference verification of reverse-mode gradients (64-bit).

#pragma once

#include <functional>
#include <string>
#include <vector>

#include "super/autodiff.hpp"
#include "super/config.hpp"
#include "super/params.hpp"

namespace super {

/// A scalar loss built on `tape` from the bound parameters.
using LossFn = std::function<Var<double>(Tape<double>&, const BoundParams<double>&)>;

struct ParamCheck {
  std::string name;
  std::size_t elements = 0;
  double max_rel_error = 0.0;
};

struct GradcheckReport {
  std::vector<ParamCheck> params;  // store order
  double max_rel_error = 0.0;
  std::size_t evaluations = 0;
};

/// Relative error |a - b| / max(|a|, |b|, 1e-8).
double relative_error(double a, double b);

/// Compares backward() against (f(x + h) - f(x - h)) / 2h elementwise for
/// every parameter. `corrupt`, when set, is added to each analytic gradient
/// element of the first parameter before comparison (negative-control hook).
/// Throws NumericError if two evaluations at the same point disagree.
GradcheckReport finite_diff_check(const LossFn& f, ParamStore<double>& params, double h = 1e-4,
                                  double corrupt = 0.0);

/// Full network loss on the given config: one instance of every rule summed,
/// drawn deterministically from `seed`.
GradcheckReport network_gradcheck(const RunConfig& cfg, std::uint64_t seed, double h = 1e-4, double corrupt = 0.0);

inline constexpr double kGradcheckTolerance = 1e-4;

}  // namespace super
