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

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "metanas/error.hpp"
#include "metanas/genotype.hpp"

namespace metanas {

// ---------------------------------------------------------------------------
// Features

inline constexpr std::size_t kFeatureDim = 30;

using FeatureVector = std::vector<double>;

/// Raw (unstandardized) features: per-cell operation histograms, link
/// densities, node counts, log10 parameter count, early accuracy.
inline FeatureVector featurize(const Individual& ind, double early_acc, std::uint64_t params) {
  FeatureVector x(kFeatureDim, 0.0);
  for (const auto* cell : {&ind.normal, &ind.reduction}) {
    const std::size_t base = cell->kind == CellKind::normal ? 0 : kNumOperations;
    for (const auto& node : cell->nodes) x[base + static_cast<std::size_t>(to_index(node.op) - 1)] += 1.0;
  }
  x[24] = ind.normal.link_density();
  x[25] = ind.reduction.link_density();
  x[26] = static_cast<double>(ind.normal.size());
  x[27] = static_cast<double>(ind.reduction.size());
  x[28] = std::log10(static_cast<double>(std::max<std::uint64_t>(params, 1)));
  x[29] = early_acc;
  return x;
}

/// Per-dimension z-scoring; a dimension with zero spread passes through.
struct Standardizer {
  std::vector<double> mean;
  std::vector<double> stddev;

  static Standardizer fit(std::span<const FeatureVector> xs) {
    Standardizer s;
    if (xs.empty()) return s;
    const std::size_t d = xs.front().size();
    s.mean.assign(d, 0.0);
    s.stddev.assign(d, 0.0);
    for (const auto& x : xs)
      for (std::size_t k = 0; k < d; ++k) s.mean[k] += x[k];
    for (auto& m : s.mean) m /= static_cast<double>(xs.size());
    for (const auto& x : xs)
      for (std::size_t k = 0; k < d; ++k) s.stddev[k] += (x[k] - s.mean[k]) * (x[k] - s.mean[k]);
    for (auto& v : s.stddev) v = std::sqrt(v / static_cast<double>(xs.size()));
    return s;
  }

  FeatureVector apply(const FeatureVector& x) const {
    if (mean.empty()) return x;
    if (x.size() != mean.size()) fail(ErrorKind::dimension_mismatch, "feature dimension mismatch");
    FeatureVector out(x.size());
    for (std::size_t k = 0; k < x.size(); ++k)
      out[k] = stddev[k] > 0.0 ? (x[k] - mean[k]) / stddev[k] : x[k];
    return out;
  }
};

inline double squared_distance(const FeatureVector& a, const FeatureVector& b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += (a[k] - b[k]) * (a[k] - b[k]);
  return s;
}

// ---------------------------------------------------------------------------
// RBF regression

struct RbfModel {
  std::vector<FeatureVector> centers;
  std::vector<double> weights;
  double kernel_width = 1.0;
  double lambda = 1e-8;

  std::size_t dimension() const noexcept { return centers.empty() ? 0 : centers.front().size(); }
};

inline constexpr double kDefaultRbfLambda = 1e-8;

struct RbfSample {
  FeatureVector x;
  double y = 0.0;
};

/// Merges samples with identical feature vectors by averaging their targets.
/// Output keeps first-occurrence order.
inline std::vector<RbfSample> merge_duplicates(std::span<const RbfSample> samples) {
  std::vector<RbfSample> out;
  std::vector<int> counts;
  std::map<FeatureVector, std::size_t> seen;
  for (const auto& s : samples) {
    auto [it, fresh] = seen.emplace(s.x, out.size());
    if (fresh) {
      out.push_back(s);
      counts.push_back(1);
    } else {
      out[it->second].y += s.y;
      ++counts[it->second];
    }
  }
  for (std::size_t i = 0; i < out.size(); ++i) out[i].y /= counts[i];
  return out;
}

inline double median_pairwise_distance(std::span<const FeatureVector> xs) {
  std::vector<double> d;
  for (std::size_t i = 0; i < xs.size(); ++i)
    for (std::size_t j = i + 1; j < xs.size(); ++j) d.push_back(std::sqrt(squared_distance(xs[i], xs[j])));
  if (d.empty()) return 1.0;
  const auto mid = d.begin() + static_cast<std::ptrdiff_t>(d.size() / 2);
  std::nth_element(d.begin(), mid, d.end());
  double m = *mid;
  if (d.size() % 2 == 0) m = 0.5 * (m + *std::max_element(d.begin(), mid));
  return m > 0.0 ? m : 1.0;
}

inline double rbf_kernel(double squared_r, double width) {
  return std::exp(-squared_r / (2.0 * width * width));
}

/// Gaussian RBF fit solving (K + lambda*I) w = y.
inline RbfModel fit_rbf(std::span<const RbfSample> raw, double lambda = kDefaultRbfLambda) {
  const auto samples = merge_duplicates(raw);
  if (samples.size() < 2)
    fail(ErrorKind::invalid_arguments, "fit_rbf needs at least two distinct samples");
  RbfModel m;
  m.lambda = lambda;
  for (const auto& s : samples) {
    if (s.x.size() != samples.front().x.size())
      fail(ErrorKind::dimension_mismatch, "samples of different dimension");
    m.centers.push_back(s.x);
  }
  m.kernel_width = median_pairwise_distance(m.centers);

  const auto n = static_cast<Eigen::Index>(samples.size());
  Eigen::MatrixXd k(n, n);
  Eigen::VectorXd y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    y(i) = samples[static_cast<std::size_t>(i)].y;
    for (Eigen::Index j = 0; j < n; ++j)
      k(i, j) = rbf_kernel(squared_distance(m.centers[static_cast<std::size_t>(i)],
                                            m.centers[static_cast<std::size_t>(j)]),
                           m.kernel_width);
    k(i, i) += lambda;
  }
  // Gaussian kernel matrices are often badly conditioned yet still solvable
  // to the required accuracy, so the solve is judged by its residual.
  const Eigen::VectorXd w = k.fullPivLu().solve(y);
  if (!w.allFinite() || (k * w - y).cwiseAbs().maxCoeff() > 1e-6 * std::max(1.0, y.cwiseAbs().maxCoeff()))
    fail(ErrorKind::singular_system, "RBF kernel matrix is numerically singular");
  m.weights.assign(w.data(), w.data() + w.size());
  return m;
}

inline double predict(const RbfModel& m, const FeatureVector& x) {
  if (x.size() != m.dimension())
    fail(ErrorKind::dimension_mismatch, "query dimension " + std::to_string(x.size()) +
                                            " vs model dimension " + std::to_string(m.dimension()));
  double s = 0.0;
  for (std::size_t i = 0; i < m.centers.size(); ++i)
    s += m.weights[i] * rbf_kernel(squared_distance(x, m.centers[i]), m.kernel_width);
  return s;
}

inline double clamp_error(double e) { return std::clamp(e, 0.0, 1.0); }

/// Archive-level regressor: standardized features and an RBF on targets
/// centered at their mean, so far from every center the prediction reverts
/// to the mean error rather than to zero. Falls back to the nearest neighbor
/// when the kernel system cannot be solved or there are too few distinct
/// samples.
class Surrogate {
 public:
  void fit(std::span<const RbfSample> raw) {
    raw_ = {raw.begin(), raw.end()};
    std::vector<FeatureVector> xs;
    for (const auto& s : raw_) xs.push_back(s.x);
    scaler_ = Standardizer::fit(xs);
    refit();
  }

  bool fitted() const noexcept { return !samples_.empty(); }
  bool using_fallback() const noexcept { return !rbf_.has_value(); }
  const std::optional<RbfModel>& rbf() const noexcept { return rbf_; }
  const Standardizer& scaler() const noexcept { return scaler_; }

  /// Unclamped prediction for a raw feature vector.
  double predict_raw(const FeatureVector& raw_x) const {
    if (samples_.empty()) fail(ErrorKind::invalid_arguments, "surrogate used before fitting");
    const FeatureVector x = scaler_.apply(raw_x);
    if (rbf_) return offset_ + predict(*rbf_, x);
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < samples_.size(); ++i) {
      const double d = squared_distance(x, samples_[i].x);
      if (d < best_d) {
        best_d = d;
        best = i;
      }
    }
    return samples_[best].y;
  }

  double predict_error(const FeatureVector& raw_x) const { return clamp_error(predict_raw(raw_x)); }

  /// Infill step: among `candidates` (raw features), the one farthest from
  /// every current center joins the model with its own prediction as target,
  /// and the model is refit. Returns the chosen index. No training is spent.
  std::size_t add_infill_point(std::span<const FeatureVector> candidates) {
    if (candidates.empty()) fail(ErrorKind::invalid_arguments, "no infill candidates");
    std::size_t best = 0;
    double best_d = -1.0;
    for (std::size_t c = 0; c < candidates.size(); ++c) {
      const FeatureVector x = scaler_.apply(candidates[c]);
      double nearest = std::numeric_limits<double>::infinity();
      for (const auto& s : samples_) nearest = std::min(nearest, squared_distance(x, s.x));
      if (nearest > best_d) {
        best_d = nearest;
        best = c;
      }
    }
    raw_.push_back({candidates[best], predict_raw(candidates[best])});
    refit();
    return best;
  }

 private:
  void refit() {
    std::vector<RbfSample> scaled;
    for (const auto& s : raw_) scaled.push_back({scaler_.apply(s.x), s.y});
    samples_ = merge_duplicates(scaled);
    rbf_.reset();
    offset_ = 0.0;
    if (samples_.size() < 2) return;
    for (const auto& s : samples_) offset_ += s.y;
    offset_ /= static_cast<double>(samples_.size());
    std::vector<RbfSample> centered = samples_;
    for (auto& s : centered) s.y -= offset_;
    try {
      rbf_ = fit_rbf(centered);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::singular_system) throw;
    }
  }

  std::vector<RbfSample> raw_;
  std::vector<RbfSample> samples_;  // standardized, deduplicated
  Standardizer scaler_;
  std::optional<RbfModel> rbf_;
  double offset_ = 0.0;  // mean target; the kernel part models residuals
};

// ---------------------------------------------------------------------------
// Rank correlation

/// Kendall's tau between two rankings of the same n items (rank_a[i] is the
/// rank of item i). O(n log n) via inversion counting.
inline double kendall_tau(std::span<const std::size_t> rank_a, std::span<const std::size_t> rank_b) {
  if (rank_a.size() != rank_b.size())
    fail(ErrorKind::length_mismatch, "rankings differ in length");
  const std::size_t n = rank_a.size();
  if (n < 2) fail(ErrorKind::invalid_arguments, "kendall_tau needs at least two items");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return rank_a[i] < rank_a[j]; });
  std::vector<std::size_t> seq(n), buf(n);
  for (std::size_t k = 0; k < n; ++k) seq[k] = rank_b[order[k]];
  for (std::size_t k = 1; k < n; ++k)
    if (rank_a[order[k]] == rank_a[order[k - 1]])
      fail(ErrorKind::invalid_arguments, "kendall_tau expects untied rankings");

  std::uint64_t inversions = 0;
  for (std::size_t width = 1; width < n; width *= 2) {
    for (std::size_t lo = 0; lo < n; lo += 2 * width) {
      const std::size_t mid = std::min(lo + width, n), hi = std::min(lo + 2 * width, n);
      std::size_t i = lo, j = mid, k = lo;
      while (i < mid && j < hi) {
        if (seq[j] < seq[i]) {
          inversions += mid - i;
          buf[k++] = seq[j++];
        } else {
          if (seq[j] == seq[i]) fail(ErrorKind::invalid_arguments, "kendall_tau expects untied rankings");
          buf[k++] = seq[i++];
        }
      }
      while (i < mid) buf[k++] = seq[i++];
      while (j < hi) buf[k++] = seq[j++];
    }
    seq.swap(buf);
  }
  const double pairs = static_cast<double>(n) * static_cast<double>(n - 1) / 2.0;
  const double discordant = static_cast<double>(inversions);
  return (pairs - 2.0 * discordant) / pairs;
}

/// Ranks (0 = best) of items by ascending score, ties broken by ascending key.
inline std::vector<std::size_t> rank_by(std::span<const double> scores, std::span<const std::uint64_t> keys) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scores[a] != scores[b] ? scores[a] < scores[b] : keys[a] < keys[b];
  });
  std::vector<std::size_t> rank(scores.size());
  for (std::size_t r = 0; r < order.size(); ++r) rank[order[r]] = r;
  return rank;
}

// ---------------------------------------------------------------------------
// Threshold and fitness

inline constexpr double kDefaultParamScale = 1e6;

struct ThresholdState {
  double h_t = 1.0;
  double tau = 0.0;

  double gamma() const noexcept { return 1.0 - h_t; }
};

/// H_t = 1 - tau*acc_s - (1 - tau) * param_scale/params. Not clamped.
inline ThresholdState update_threshold(ThresholdState state, double tau, double acc_s,
                                       std::uint64_t params, double param_scale = kDefaultParamScale) {
  if (params < 1) fail(ErrorKind::invalid_arguments, "params must be >= 1");
  state.tau = tau;
  state.h_t = 1.0 - tau * acc_s - (1.0 - tau) * (param_scale / static_cast<double>(params));
  return state;
}

inline double penalty_fitness(double acc_s, double complexity, double c_target, double complexity_max,
                              double gamma) {
  if (complexity_max == c_target)
    fail(ErrorKind::degenerate_denominator, "complexity_max equals c_target");
  return gamma * acc_s -
         (1.0 - gamma) * std::abs(complexity - c_target) / std::abs(complexity_max - c_target);
}

// ---------------------------------------------------------------------------
// Evaluation records

enum class Provenance { initial, surrogate_only, fully_evaluated };

constexpr std::string_view to_string(Provenance p) noexcept {
  switch (p) {
    case Provenance::initial: return "fully-evaluated-at-M";
    case Provenance::surrogate_only: return "surrogate-only";
    case Provenance::fully_evaluated: return "fully-evaluated";
  }
  return "?";
}

inline Provenance provenance_from_string(std::string_view s) {
  for (auto p : {Provenance::initial, Provenance::surrogate_only, Provenance::fully_evaluated})
    if (to_string(p) == s) return p;
  fail(ErrorKind::malformed_file, "unknown provenance '" + std::string(s) + "'");
}

struct EvalRecord {
  std::uint64_t id = 0;
  int gen = 0;
  double early_acc = 0.0;
  std::optional<double> full_acc;
  std::uint64_t params = 0;
  std::optional<double> predicted_error;
  Provenance provenance = Provenance::initial;
  bool failed = false;
  /// Raw surrogate features, kept so the archive can be refit after resume.
  FeatureVector features;

  bool fully_evaluated() const noexcept { return full_acc.has_value(); }
};

/// Kendall's tau between early and full accuracy rankings over the records
/// that carry both; nullopt when fewer than two exist.
inline std::optional<double> early_full_tau(std::span<const EvalRecord> records) {
  std::vector<double> early, full;
  std::vector<std::uint64_t> ids;
  for (const auto& r : records)
    if (r.full_acc && !r.failed) {
      early.push_back(-r.early_acc);
      full.push_back(-*r.full_acc);
      ids.push_back(r.id);
    }
  if (ids.size() < 2) return std::nullopt;
  const auto ra = rank_by(early, ids);
  const auto rb = rank_by(full, ids);
  return kendall_tau(ra, rb);
}

}  // namespace metanas
