// Copyright 2026 The metanas Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <array>
#include <cmath>
#include <cstdint>

#include "metanas/evaluator/trainer.hpp"
#include "metanas/genotype.hpp"
#include "metanas/graph.hpp"

namespace metanas {

/// Coefficients of the closed-form oracle score (version 1). Changing any
/// value invalidates enumerated ground-truth fixtures.
struct OracleCoefficients {
  static constexpr int kVersion = 1;
  /// Indexed by operation index - 1.
  static constexpr std::array<double, kNumOperations> kOpWeight = {
      0.10,  // identity
      0.55,  // conv1x1
      1.00,  // conv3x3
      0.85,  // conv1x3_3x1
      0.95,  // conv1x7_7x1
      0.20,  // maxpool2
      0.30,  // maxpool3
      0.25,  // maxpool5
      0.15,  // avgpool2
      0.25,  // avgpool3
      0.20,  // avgpool5
      0.45,  // se_layer
  };
  static constexpr double kDensityWeight = 0.75;
  static constexpr double kFloor = 0.30;
  static constexpr double kSpan = 0.65;
  static constexpr double kScale = 6.0;
  static constexpr double kEpochScale = 10.0;
};

/// A(g) = 0.30 + 0.65 * (1 - exp(-s/6)) with s the weighted operation
/// histogram summed over both cells plus 0.75 times the summed link
/// densities.
inline double oracle_asymptotic_accuracy(const Individual& ind) {
  double s = 0.0;
  for (const auto* cell : {&ind.normal, &ind.reduction}) {
    for (const auto& node : cell->nodes)
      s += OracleCoefficients::kOpWeight[static_cast<std::size_t>(to_index(node.op) - 1)];
    s += OracleCoefficients::kDensityWeight * cell->link_density();
  }
  return OracleCoefficients::kFloor +
         OracleCoefficients::kSpan * (1.0 - std::exp(-s / OracleCoefficients::kScale));
}

inline double oracle_accuracy_at(double asymptotic, int epochs) {
  return asymptotic * (1.0 - std::exp(-static_cast<double>(epochs) / OracleCoefficients::kEpochScale));
}

/// Deterministic metrics: accuracy saturating in the epoch count, a loss
/// curve of ln(10) * (1 - acc(e)) per epoch, and the parameter count of the
/// network under `macro`.
inline Metrics oracle_evaluate(const Individual& ind, int epochs, const MacroConfig& macro = {}) {
  if (auto report = validate_structure(ind); !report.ok())
    fail(ErrorKind::invalid_individual, report.summary());
  if (epochs < 0) fail(ErrorKind::invalid_arguments, "epochs must be >= 0");
  const double a = oracle_asymptotic_accuracy(ind);
  Metrics m;
  m.params = count_parameters(ind, macro);
  m.epochs_trained = epochs;
  for (int e = 1; e <= epochs; ++e) m.loss_curve.push_back(std::log(10.0) * (1.0 - oracle_accuracy_at(a, e)));
  m.top1_acc = oracle_accuracy_at(a, epochs);
  return m;
}

}  // namespace metanas
