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
#include <limits>
#include <numeric>
#include <ostream>
#include <span>
#include <vector>

#include "metanas/error.hpp"
#include "metanas/io.hpp"

namespace metanas {

/// Both objectives are minimized: f1 is the validation error rate, f2 the
/// parameter count (kept raw; normalization belongs to hypervolume callers).
struct ObjectiveVector {
  double f1 = 0.0;
  double f2 = 0.0;
  friend bool operator==(const ObjectiveVector&, const ObjectiveVector&) = default;
};

inline bool dominates(const ObjectiveVector& a, const ObjectiveVector& b) noexcept {
  return a.f1 <= b.f1 && a.f2 <= b.f2 && (a.f1 < b.f1 || a.f2 < b.f2);
}

using Fronts = std::vector<std::vector<std::size_t>>;

/// Deb's fast non-dominated sort. Indices inside each front are ascending.
inline Fronts fast_nondominated_sort(std::span<const ObjectiveVector> points) {
  const std::size_t n = points.size();
  std::vector<std::vector<std::size_t>> dominated_by_me(n);
  std::vector<std::size_t> domination_count(n, 0);
  Fronts fronts;
  std::vector<std::size_t> current;
  for (std::size_t p = 0; p < n; ++p) {
    for (std::size_t q = 0; q < n; ++q) {
      if (p == q) continue;
      if (dominates(points[p], points[q]))
        dominated_by_me[p].push_back(q);
      else if (dominates(points[q], points[p]))
        ++domination_count[p];
    }
    if (domination_count[p] == 0) current.push_back(p);
  }
  while (!current.empty()) {
    std::vector<std::size_t> next;
    for (std::size_t p : current)
      for (std::size_t q : dominated_by_me[p])
        if (--domination_count[q] == 0) next.push_back(q);
    std::sort(next.begin(), next.end());
    fronts.push_back(std::move(current));
    current = std::move(next);
  }
  return fronts;
}

/// Crowding distance of each point of one front, in input order. Ties in an
/// objective keep input order, so callers pass points sorted by id.
inline std::vector<double> crowding_distance(std::span<const ObjectiveVector> front) {
  constexpr double inf = std::numeric_limits<double>::infinity();
  const std::size_t n = front.size();
  std::vector<double> distance(n, 0.0);
  if (n <= 2) {
    std::fill(distance.begin(), distance.end(), inf);
    return distance;
  }
  std::vector<std::size_t> order(n);
  for (int objective = 0; objective < 2; ++objective) {
    const auto value = [&](std::size_t i) { return objective == 0 ? front[i].f1 : front[i].f2; };
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return value(a) < value(b); });
    distance[order.front()] = inf;
    distance[order.back()] = inf;
    const double span = value(order.back()) - value(order.front());
    if (span <= 0.0) continue;
    for (std::size_t k = 1; k + 1 < n; ++k)
      distance[order[k]] += (value(order[k + 1]) - value(order[k - 1])) / span;
  }
  return distance;
}

struct Candidate {
  std::uint64_t id = 0;
  ObjectiveVector objectives;
};

struct RankedIndividual {
  std::uint64_t id = 0;
  ObjectiveVector objectives;
  int front = 0;
  double crowding = 0.0;
};

/// Assigns front rank and crowding distance; output is ordered by id.
inline std::vector<RankedIndividual> rank_population(std::span<const Candidate> candidates) {
  std::vector<Candidate> sorted(candidates.begin(), candidates.end());
  std::stable_sort(sorted.begin(), sorted.end(),
                   [](const Candidate& a, const Candidate& b) { return a.id < b.id; });
  std::vector<ObjectiveVector> points;
  points.reserve(sorted.size());
  for (const auto& c : sorted) points.push_back(c.objectives);

  std::vector<RankedIndividual> out(sorted.size());
  const Fronts fronts = fast_nondominated_sort(points);
  for (std::size_t f = 0; f < fronts.size(); ++f) {
    std::vector<ObjectiveVector> pts;
    for (std::size_t i : fronts[f]) pts.push_back(points[i]);
    const auto cd = crowding_distance(pts);
    for (std::size_t k = 0; k < fronts[f].size(); ++k) {
      const std::size_t i = fronts[f][k];
      out[i] = {sorted[i].id, sorted[i].objectives, static_cast<int>(f), cd[k]};
    }
  }
  return out;
}

/// NSGA-II survivor selection over parents and offspring: whole fronts are
/// admitted while they fit, the overflowing front is cut by descending
/// crowding distance (ties to the smaller id), and ranks are recomputed on
/// the survivors.
inline std::vector<RankedIndividual> environmental_selection(std::span<const Candidate> parents,
                                                             std::span<const Candidate> offspring,
                                                             std::size_t capacity) {
  std::vector<Candidate> pool(parents.begin(), parents.end());
  pool.insert(pool.end(), offspring.begin(), offspring.end());
  if (pool.size() < capacity)
    fail(ErrorKind::insufficient_candidates, std::to_string(pool.size()) + " candidates for capacity " +
                                                 std::to_string(capacity));
  std::stable_sort(pool.begin(), pool.end(),
                   [](const Candidate& a, const Candidate& b) { return a.id < b.id; });
  std::vector<ObjectiveVector> points;
  for (const auto& c : pool) points.push_back(c.objectives);

  std::vector<Candidate> survivors;
  for (const auto& front : fast_nondominated_sort(points)) {
    if (survivors.size() + front.size() <= capacity) {
      for (std::size_t i : front) survivors.push_back(pool[i]);
      if (survivors.size() == capacity) break;
      continue;
    }
    std::vector<ObjectiveVector> pts;
    for (std::size_t i : front) pts.push_back(points[i]);
    const auto cd = crowding_distance(pts);
    std::vector<std::size_t> order(front.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      if (cd[a] != cd[b]) return cd[a] > cd[b];
      return pool[front[a]].id < pool[front[b]].id;
    });
    for (std::size_t k = 0; survivors.size() < capacity; ++k) survivors.push_back(pool[front[order[k]]]);
    break;
  }
  return rank_population(survivors);
}

/// Exact 2-D hypervolume of the region dominated by `front` and bounded by
/// `ref`.
inline double hypervolume(std::span<const ObjectiveVector> front, const ObjectiveVector& ref) {
  for (const auto& p : front)
    if (p.f1 > ref.f1 || p.f2 > ref.f2)
      fail(ErrorKind::point_outside_reference, "point (" + format_double(p.f1) + ", " +
                                                   format_double(p.f2) + ") beyond reference");
  std::vector<ObjectiveVector> pts(front.begin(), front.end());
  std::sort(pts.begin(), pts.end(), [](const ObjectiveVector& a, const ObjectiveVector& b) {
    return a.f1 != b.f1 ? a.f1 < b.f1 : a.f2 < b.f2;
  });
  double volume = 0.0;
  double best_f2 = ref.f2;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    if (pts[i].f2 >= best_f2) continue;
    // The strip from this point to the next improving point (or the reference).
    double next_f1 = ref.f1;
    for (std::size_t k = i + 1; k < pts.size(); ++k)
      if (pts[k].f2 < pts[i].f2) {
        next_f1 = pts[k].f1;
        break;
      }
    volume += (next_f1 - pts[i].f1) * (ref.f2 - pts[i].f2);
    best_f2 = pts[i].f2;
  }
  return volume;
}

inline void write_front_csv(std::ostream& out, std::span<const RankedIndividual> ranked) {
  out << "id,f1_error,f2_params,front,crowding\n";
  for (const auto& r : ranked)
    out << r.id << ',' << format_double(r.objectives.f1) << ',' << format_double(r.objectives.f2) << ','
        << r.front << ',' << format_double(r.crowding) << '\n';
}

}  // namespace metanas
