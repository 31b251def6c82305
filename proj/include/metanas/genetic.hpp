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
#include <cstdint>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "metanas/error.hpp"
#include "metanas/genotype.hpp"
#include "metanas/moea.hpp"
#include "metanas/random.hpp"

namespace metanas {

struct MutationRates {
  double link = 0.0;  // M_l
  double op = 0.0;    // M_o
};

struct MutationConfig {
  int period = 4;  // N_l
  int window = 1;  // N_h
  /// Use the printed branch order of the period rule (low rates inside the
  /// window) instead of the default "briefly increases" reading.
  bool literal_eq8 = false;
  /// When false the base rates are used for every offspring.
  bool period_enabled = true;
  double node_add_remove_prob = 0.05;
  /// Bypasses the period rule entirely (tests and ablations).
  std::optional<MutationRates> forced_rates;

  void check() const {
    if (window < 1 || window > period)
      fail(ErrorKind::invalid_config, "mutation window must satisfy 1 <= N_h <= N_l");
    if (node_add_remove_prob < 0.0 || node_add_remove_prob > 1.0)
      fail(ErrorKind::invalid_config, "node_add_remove_prob must lie in [0, 1]");
  }
};

struct CrossoverConfig {
  double inter_swap_prob = 0.5;
  double intra_prob = 1.0;
};

inline bool in_mutation_window(std::uint64_t offspring_index, const MutationConfig& cfg) noexcept {
  const auto period = static_cast<std::uint64_t>(cfg.period);
  const auto window = static_cast<std::uint64_t>(cfg.window);
  return offspring_index >= period && offspring_index % period < window;
}

/// Period mutation rates. Base rates are [1/(l_v - l_o), 1/l_o]; elevated
/// rates are one minus those. By default the elevated rates apply inside the
/// window [k*N_l, k*N_l + N_h), k >= 1; `literal_eq8` swaps the branches.
inline MutationRates mutation_rates(int l_v, int l_o, std::uint64_t offspring_index,
                                    const MutationConfig& cfg) {
  if (l_v < 2 || l_o < 1)
    fail(ErrorKind::invalid_arguments,
         "mutation_rates needs l_v >= 2 and l_o >= 1 (got " + std::to_string(l_v) + ", " +
             std::to_string(l_o) + ")");
  const double diff = static_cast<double>(l_v - l_o);
  const double lo = static_cast<double>(l_o);
  const MutationRates base{1.0 / std::max(1.0, diff), 1.0 / lo};
  const MutationRates elevated{1.0 - 1.0 / std::max(2.0, diff), 1.0 - 1.0 / std::max(2.0, lo)};

  MutationRates r = base;
  if (cfg.period_enabled) {
    const bool window = in_mutation_window(offspring_index, cfg);
    r = (window != cfg.literal_eq8) ? elevated : base;
  }
  r.link = std::clamp(r.link, 0.01, 0.99);
  r.op = std::clamp(r.op, 0.01, 0.99);
  return r;
}

inline MutationRates cell_mutation_rates(const CellGenotype& cell, std::uint64_t offspring_index,
                                         const MutationConfig& cfg) {
  if (cfg.forced_rates) return *cfg.forced_rates;
  return mutation_rates(static_cast<int>(cell.gene_count()), static_cast<int>(cell.size()),
                        offspring_index, cfg);
}

// ---------------------------------------------------------------------------
// Mating selection

using ParentPair = std::pair<std::size_t, std::size_t>;

inline bool tournament_beats(const RankedIndividual& a, const RankedIndividual& b) noexcept {
  if (a.front != b.front) return a.front < b.front;
  if (a.crowding != b.crowding) return a.crowding > b.crowding;
  return a.id < b.id;
}

/// Returns `count` pairs of indices into `population`.
inline std::vector<ParentPair> binary_tournament(std::span<const RankedIndividual> population,
                                                 std::size_t count, Rng& rng) {
  if (population.empty()) fail(ErrorKind::empty_population, "binary tournament on empty population");
  const auto pick = [&]() {
    const std::size_t a = uniform_index(rng, population.size());
    const std::size_t b = uniform_index(rng, population.size());
    return tournament_beats(population[b], population[a]) ? b : a;
  };
  std::vector<ParentPair> pairs;
  pairs.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t first = pick();
    pairs.emplace_back(first, pick());
  }
  return pairs;
}

// ---------------------------------------------------------------------------
// Crossover

inline std::pair<Individual, Individual> inter_crossover(const Individual& p1, const Individual& p2,
                                                         Rng& rng, IdSequence& ids,
                                                         const CrossoverConfig& cfg = {}) {
  Individual a = p1, b = p2;
  if (bernoulli(rng, cfg.inter_swap_prob)) std::swap(a.normal, b.normal);
  if (bernoulli(rng, cfg.inter_swap_prob)) std::swap(a.reduction, b.reduction);
  a.id = ids.next();
  b.id = ids.next();
  return {std::move(a), std::move(b)};
}

/// Single-point crossover at a given point, with inclusive slice bounds:
/// genes 0..=point come from the other parent. Requires point < min(N0, N1).
/// The first result has the node count of `c0`.
inline std::pair<CellGenotype, CellGenotype> intra_crossover_at(const CellGenotype& c0,
                                                                const CellGenotype& c1,
                                                                std::size_t point) {
  if (c0.kind != c1.kind) fail(ErrorKind::kind_mismatch, "intra crossover between different cell kinds");
  if (point >= std::min(c0.size(), c1.size()))
    fail(ErrorKind::invalid_arguments, "crossover point outside the shorter parent");
  CellGenotype out0 = c0, out1 = c1;
  for (std::size_t j = 0; j <= point; ++j) {
    out0.nodes[j] = c1.nodes[j];
    out1.nodes[j] = c0.nodes[j];
  }
  repair(out0);
  repair(out1);
  return {std::move(out0), std::move(out1)};
}

/// Draws Rand uniformly from [0, N_1) over the longer parent and redraws
/// until it falls inside the shorter one.
inline std::pair<CellGenotype, CellGenotype> intra_crossover(const CellGenotype& c0,
                                                             const CellGenotype& c1, Rng& rng) {
  if (c0.kind != c1.kind) fail(ErrorKind::kind_mismatch, "intra crossover between different cell kinds");
  const std::size_t shorter = std::min(c0.size(), c1.size());
  const std::size_t longer = std::max(c0.size(), c1.size());
  if (shorter == 0) return {c0, c1};
  std::size_t point = uniform_index(rng, longer);
  while (point >= shorter) point = uniform_index(rng, longer);
  return intra_crossover_at(c0, c1, point);
}

// ---------------------------------------------------------------------------
// Mutation

struct MutationCounts {
  std::size_t link_bits = 0;
  std::size_t link_flips = 0;
  std::size_t op_genes = 0;
  std::size_t op_changes = 0;
};

/// Bit-flip and operation resampling at fixed rates. Structural repair is left
/// to the caller so that raw flip statistics can be observed.
inline MutationCounts flip_and_resample(CellGenotype& cell, const MutationRates& rates,
                                        const SearchSpace& space, Rng& rng) {
  MutationCounts counts;
  for (auto& node : cell.nodes) {
    for (auto& bit : node.links) {
      ++counts.link_bits;
      if (bernoulli(rng, rates.link)) {
        bit ^= 1;
        ++counts.link_flips;
      }
    }
  }
  for (auto& node : cell.nodes) {
    ++counts.op_genes;
    if (space.ops.size() < 2 || !bernoulli(rng, rates.op)) continue;
    std::vector<OperationKind> others;
    for (auto op : space.ops)
      if (op != node.op) others.push_back(op);
    node.op = others[uniform_index(rng, others.size())];
    ++counts.op_changes;
  }
  return counts;
}

inline void remove_node(CellGenotype& cell, std::size_t k) {
  cell.nodes.erase(cell.nodes.begin() + static_cast<std::ptrdiff_t>(k));
  for (std::size_t j = k; j < cell.nodes.size(); ++j) {
    auto& links = cell.nodes[j].links;
    links.erase(links.begin() + static_cast<std::ptrdiff_t>(k + 2));
  }
}

/// Appends a random node or removes a random one, whichever the node-count
/// bounds admit (uniform choice when both do).
inline void add_or_remove_node(CellGenotype& cell, const SearchSpace& space, Rng& rng) {
  const auto n = static_cast<int>(cell.size());
  const bool can_add = n < space.max_nodes;
  const bool can_remove = n > space.min_nodes;
  if (!can_add && !can_remove) return;
  const bool add = can_add && (!can_remove || bernoulli(rng, 0.5));
  if (add)
    cell.nodes.push_back(random_node(cell.size(), space, rng));
  else
    remove_node(cell, uniform_index(rng, cell.size()));
}

inline void mutate_cell(CellGenotype& cell, std::uint64_t offspring_index, const MutationConfig& cfg,
                        const SearchSpace& space, Rng& rng) {
  const MutationRates rates = cell_mutation_rates(cell, offspring_index, cfg);
  flip_and_resample(cell, rates, space, rng);
  if (bernoulli(rng, cfg.node_add_remove_prob)) add_or_remove_node(cell, space, rng);
  repair(cell);
}

/// Period mutation of both cells; the parent is untouched and the child gets
/// a fresh id.
inline Individual period_mutation(const Individual& parent, std::uint64_t offspring_index,
                                  const MutationConfig& cfg, const SearchSpace& space, Rng& rng,
                                  IdSequence& ids) {
  Individual child = parent;
  mutate_cell(child.normal, offspring_index, cfg, space, rng);
  if (space.shared_cell)
    sync_shared_cell(child);
  else
    mutate_cell(child.reduction, offspring_index, cfg, space, rng);
  child.id = ids.next();
  return child;
}

}  // namespace metanas
