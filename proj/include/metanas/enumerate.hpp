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
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "metanas/config.hpp"
#include "metanas/evaluator/oracle.hpp"
#include "metanas/moea.hpp"

namespace metanas {

inline constexpr double kEnumerationBound = 1e6;

/// Number of canonical genotypes in `space`: node j has 2^(j+2) - 1 nonzero
/// link patterns times |ops| operations; unshared spaces square the count.
inline double enumeration_size(const SearchSpace& space) {
  double cells = 0.0;
  for (int n = space.min_nodes; n <= space.max_nodes; ++n) {
    double count = 1.0;
    for (int j = 0; j < n; ++j) count *= (std::ldexp(1.0, j + 2) - 1.0) * static_cast<double>(space.ops.size());
    cells += count;
  }
  return space.shared_cell ? cells : cells * cells;
}

/// Visits every cell of `kind` in the space, node counts ascending.
inline void for_each_cell(const SearchSpace& space, CellKind kind, const std::function<void(const CellGenotype&)>& fn) {
  CellGenotype cell{kind, {}};
  std::function<void()> grow = [&] {
    const auto n = static_cast<int>(cell.size());
    if (n >= space.min_nodes) fn(cell);
    if (n == space.max_nodes) return;
    const std::size_t width = required_link_count(cell.size());
    for (std::uint32_t mask = 1; mask < (1u << width); ++mask)
      for (auto op : space.ops) {
        NodeGene node;
        node.links.resize(width);
        for (std::size_t b = 0; b < width; ++b) node.links[b] = static_cast<std::uint8_t>((mask >> b) & 1u);
        node.op = op;
        cell.nodes.push_back(std::move(node));
        grow();
        cell.nodes.pop_back();
      }
  };
  grow();
}

struct FrontPoint {
  double f1 = 0.0;
  double f2 = 0.0;
  std::size_t multiplicity = 0;  // genotypes sharing this objective vector
  friend bool operator==(const FrontPoint&, const FrontPoint&) = default;
};

struct EnumerationResult {
  std::size_t genotypes = 0;
  std::size_t distinct_objectives = 0;
  std::vector<FrontPoint> front;  // ascending f2
};

/// Scores every genotype with the oracle at `full_epochs` and keeps the
/// points no other point dominates (quadratic pairwise check over the
/// distinct objective vectors).
inline EnumerationResult enumerate_front(const SearchConfig& cfg) {
  const double size = enumeration_size(cfg.space);
  if (size > kEnumerationBound)
    fail(ErrorKind::enumeration_bound, "space holds " + format_double(size) + " genotypes, above the bound of " +
                                           format_double(kEnumerationBound));
  const MacroConfig macro = cfg.resolved_macro();
  std::map<std::pair<double, double>, std::size_t> counts;  // (f1, f2) -> multiplicity
  EnumerationResult out;
  const auto score = [&](const Individual& ind) {
    const Metrics m = oracle_evaluate(ind, cfg.full_epochs, macro);
    ++counts[{1.0 - m.top1_acc, static_cast<double>(m.params)}];
    ++out.genotypes;
  };
  if (cfg.space.shared_cell) {
    for_each_cell(cfg.space, CellKind::normal, [&](const CellGenotype& c) {
      Individual ind;
      ind.normal = c;
      sync_shared_cell(ind);
      score(ind);
    });
  } else {
    std::vector<CellGenotype> reductions;
    for_each_cell(cfg.space, CellKind::reduction, [&](const CellGenotype& c) { reductions.push_back(c); });
    for_each_cell(cfg.space, CellKind::normal, [&](const CellGenotype& c) {
      Individual ind;
      ind.normal = c;
      for (const auto& r : reductions) {
        ind.reduction = r;
        score(ind);
      }
    });
  }
  std::vector<FrontPoint> pts;
  for (const auto& [k, n] : counts) pts.push_back({k.first, k.second, n});
  out.distinct_objectives = pts.size();
  for (const auto& p : pts) {
    const bool dominated = std::any_of(pts.begin(), pts.end(), [&](const FrontPoint& q) {
      return dominates({q.f1, q.f2}, {p.f1, p.f2});
    });
    if (!dominated) out.front.push_back(p);
  }
  std::sort(out.front.begin(), out.front.end(),
            [](const FrontPoint& a, const FrontPoint& b) { return a.f2 != b.f2 ? a.f2 < b.f2 : a.f1 < b.f1; });
  return out;
}

inline std::string fixture_csv(const std::vector<FrontPoint>& front) {
  std::string out = "f1_error,f2_params,multiplicity\n";
  for (const auto& p : front)
    out += format_double(p.f1) + ',' + format_double(p.f2) + ',' + std::to_string(p.multiplicity) + '\n';
  return out;
}

inline std::vector<FrontPoint> parse_fixture_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "f1_error,f2_params,multiplicity")
    fail(ErrorKind::malformed_file, "fixture header must be 'f1_error,f2_params,multiplicity'");
  std::vector<FrontPoint> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto a = line.find(',');
    const auto b = line.find(',', a == std::string::npos ? a : a + 1);
    if (a == std::string::npos || b == std::string::npos) fail(ErrorKind::malformed_file, "bad fixture row '" + line + "'");
    FrontPoint p;
    p.f1 = parse_double(line.substr(0, a));
    p.f2 = parse_double(line.substr(a + 1, b - a - 1));
    p.multiplicity = static_cast<std::size_t>(parse_double(line.substr(b + 1)));
    out.push_back(p);
  }
  return out;
}

}  // namespace metanas
