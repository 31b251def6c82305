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

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "metanas/evaluator/network.hpp"
#include "metanas/genotype.hpp"
#include "metanas/graph.hpp"

namespace metanas::testing {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t shrunk = 0;   // needed a step below the nominal epsilon
  std::size_t skipped = 0;  // every step crossed a ReLU / max-pool kink
};

/// Central differences against Network::loss_and_gradient. A coordinate whose
/// +-eps perturbation changes the branch signature measures a different
/// piece of the piecewise-smooth loss, so the step is shrunk by 10x (down to
/// eps/100) until both sides stay on the same piece.
inline GradCheckResult check_gradient(const Network& net, const std::vector<double>& w,
                                      const std::vector<const double*>& images, const std::vector<int>& labels,
                                      double eps = 1e-4) {
  GradCheckResult r;
  std::vector<double> analytic, scratch;
  net.loss_and_gradient(w, images, labels, analytic);
  const std::uint64_t base = net.branch_signature(w, images);
  std::vector<double> probe = w;
  for (std::size_t i = 0; i < w.size(); ++i) {
    bool done = false;
    for (double h = eps; h >= eps / 100.0 * 0.999 && !done; h /= 10.0) {
      probe[i] = w[i] + h;
      const bool plus_ok = net.branch_signature(probe, images) == base;
      const double lp = net.loss_and_gradient(probe, images, labels, scratch);
      probe[i] = w[i] - h;
      const bool minus_ok = net.branch_signature(probe, images) == base;
      const double lm = net.loss_and_gradient(probe, images, labels, scratch);
      probe[i] = w[i];
      if (!plus_ok || !minus_ok) continue;
      const double fd = (lp - lm) / (2.0 * h);
      const double rel = std::abs(fd - analytic[i]) / std::max({std::abs(fd), std::abs(analytic[i]), 1e-6});
      r.max_rel_error = std::max(r.max_rel_error, rel);
      ++r.checked;
      if (h < eps) ++r.shrunk;
      done = true;
    }
    if (!done) ++r.skipped;
  }
  return r;
}

struct GradCheckCase {
  Network net;
  std::vector<double> weights;
  std::vector<std::vector<double>> images;
  std::vector<int> labels;

  std::vector<const double*> image_ptrs() const {
    std::vector<const double*> out;
    for (const auto& im : images) out.push_back(im.data());
    return out;
  }
};

/// Random small network (1-2 cells, 2-3 channels, 5x5 inputs, 1-4 nodes per
/// cell) with jittered initial weights and a two-sample batch.
inline GradCheckCase random_gradcheck_case(std::uint64_t seed) {
  Rng rng(seed);
  SearchSpace space;
  space.min_nodes = 1;
  space.max_nodes = 4;
  const Individual ind = random_individual(space, rng);
  MacroConfig m;
  m.num_cells = 1 + static_cast<int>(seed % 2);
  m.channels = 2 + static_cast<int>(seed % 2);
  m.input_height = m.input_width = 5;
  m.input_channels = seed % 3 == 0 ? 2 : 1;
  m.num_classes = 3;
  m.reduction_positions = seed % 4 == 0 ? std::vector<int>{} : std::vector<int>{m.num_cells - 1};
  GradCheckCase c{Network(decode(ind, m)), {}, {}, {}};
  c.weights = c.net.initial_weights(rng);
  std::normal_distribution<double> g(0.0, 1.0);
  for (auto& x : c.weights) x += 0.1 * g(rng);
  for (int b = 0; b < 2; ++b) {
    c.images.emplace_back(c.net.input_shape().size());
    for (auto& v : c.images.back()) v = g(rng);
    c.labels.push_back(static_cast<int>(uniform_index(rng, 3)));
  }
  return c;
}

}  // namespace metanas::testing
