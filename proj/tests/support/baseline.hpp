// SPDX-License-Identifier: Apache-2.0
//
// Pooled-linear baseline: multinomial logistic regression on
// [mean_cols(F); mean_cols(Qhat)]. It never sees the knowledge matrix, so it
// bounds what is answerable from the visual and question inputs alone.

#pragma once

#include <map>
#include <vector>

#include "super/data.hpp"

namespace baseline {

struct Model {
  std::vector<std::vector<double>> W;  // A x (features + 1)
  std::vector<double> mean, scale;     // feature standardization
};

std::vector<double> features(const super::Instance& inst);

Model fit(const std::vector<super::Instance>& train, std::size_t A, std::size_t epochs = 300, double lr = 0.05);

std::size_t predict(const Model& model, const super::Instance& inst);

struct Scores {
  double overall = 0;
  std::map<super::Rule, double> per_rule;
};

Scores score(const Model& model, const std::vector<super::Instance>& instances);

}  // namespace baseline
