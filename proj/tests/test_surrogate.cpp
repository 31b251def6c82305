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

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "metanas/surrogate.hpp"

namespace metanas {
namespace {

// Reference: count concordant and discordant pairs directly.
double pairwise_tau(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b) {
  long c = 0, d = 0;
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = i + 1; j < a.size(); ++j) {
      const long s = (long(a[i]) - long(a[j])) * (long(b[i]) - long(b[j]));
      (s > 0 ? c : d)++;
    }
  return double(c - d) / (double(a.size()) * double(a.size() - 1) / 2.0);
}

TEST(Featurize, HistogramAndLayout) {
  const Individual ind = deserialize(
      "normal;11:3;101:3;0011:3;01010:3;100001:3\n"
      "reduction;10:1;011:12;1000:12;01010:9;100001:11;1000000:2\n");
  const auto x = featurize(ind, 0.42, 1000);
  ASSERT_EQ(x.size(), kFeatureDim);
  for (int k = 0; k < 12; ++k) EXPECT_EQ(x[static_cast<std::size_t>(k)], k == 2 ? 5.0 : 0.0);
  EXPECT_EQ(x[12 + 11], 2.0);
  EXPECT_EQ(x[26], 5.0);
  EXPECT_EQ(x[27], 6.0);
  EXPECT_DOUBLE_EQ(x[28], 3.0);
  EXPECT_EQ(x[29], 0.42);
  EXPECT_EQ(featurize(ind, 0.42, 1000), x);
}

TEST(Featurize, HistogramSumsToNodeCount) {
  Rng rng(1);
  for (int t = 0; t < 1000; ++t) {
    const Individual ind = random_individual(SearchSpace{}, rng);
    const auto x = featurize(ind, 0.5, 12345);
    ASSERT_EQ(std::accumulate(x.begin(), x.begin() + 12, 0.0), double(ind.normal.size()));
    ASSERT_EQ(std::accumulate(x.begin() + 12, x.begin() + 24, 0.0), double(ind.reduction.size()));
    for (double v : x) ASSERT_TRUE(std::isfinite(v));
  }
}

TEST(Standardizer, ZeroSpreadPassesThrough) {
  std::vector<FeatureVector> xs{{1.0, 5.0}, {3.0, 5.0}};
  const auto s = Standardizer::fit(xs);
  EXPECT_EQ(s.apply({2.0, 5.0}), (FeatureVector{0.0, 5.0}));
  EXPECT_EQ(s.apply({3.0, 7.0}), (FeatureVector{1.0, 7.0}));
}

std::vector<RbfSample> random_samples(std::mt19937_64& rng, std::size_t n, std::size_t dim) {
  std::normal_distribution<double> g;
  std::uniform_real_distribution<double> u;
  std::vector<RbfSample> out(n);
  for (auto& s : out) {
    s.x.resize(dim);
    for (auto& v : s.x) v = g(rng);
    s.y = u(rng);
  }
  return out;
}

TEST(Rbf, InterpolatesWithoutRegularization) {
  std::mt19937_64 rng(5);
  for (int t = 0; t < 100; ++t) {
    const auto samples = random_samples(rng, 2 + static_cast<std::size_t>(t % 29), 30);
    const auto m = fit_rbf(samples, 0.0);
    for (const auto& s : samples) ASSERT_NEAR(predict(m, s.x), s.y, 1e-6);
  }
}

TEST(Rbf, ConstantTargets) {
  std::mt19937_64 rng(6);
  auto samples = random_samples(rng, 12, 4);
  for (auto& s : samples) s.y = 0.37;
  const auto m = fit_rbf(samples);
  for (const auto& s : samples) EXPECT_NEAR(predict(m, s.x), 0.37, 1e-6);
}

TEST(Rbf, SineCurve) {
  std::vector<RbfSample> samples;
  for (int i = 0; i < 20; ++i) {
    const double x = 2.0 * M_PI * i / 19.0;
    samples.push_back({{x}, std::sin(x)});
  }
  const auto m = fit_rbf(samples, 0.0);
  for (const auto& s : samples) EXPECT_NEAR(predict(m, s.x), s.y, 1e-6);
  for (int i = 0; i + 1 < 20; ++i) {
    const double x = 2.0 * M_PI * (i + 0.5) / 19.0;
    EXPECT_NEAR(predict(m, {x}), std::sin(x), 0.1);
  }
}

TEST(Rbf, FarQueryDecaysToZeroAndOrderDoesNotMatter) {
  std::mt19937_64 rng(7);
  auto samples = random_samples(rng, 10, 3);
  const auto m = fit_rbf(samples);
  EXPECT_EQ(clamp_error(predict(m, {1e3, 1e3, 1e3})), 0.0);
  auto shuffled = samples;
  std::shuffle(shuffled.begin(), shuffled.end(), rng);
  const auto m2 = fit_rbf(shuffled);
  const FeatureVector q{0.1, -0.2, 0.3};
  EXPECT_NEAR(predict(m, q), predict(m2, q), 1e-9);
  EXPECT_THROW(predict(m, {1.0}), Error);
}

TEST(Rbf, DuplicatesAreAveraged) {
  std::vector<RbfSample> samples{{{0.0}, 0.2}, {{0.0}, 0.4}, {{1.0}, 0.5}};
  const auto m = fit_rbf(samples);
  EXPECT_EQ(m.centers.size(), 2u);
  EXPECT_NEAR(predict(m, {0.0}), 0.3, 1e-6);
}

TEST(Surrogate, FallsBackToNearestNeighbour) {
  Surrogate s;
  std::vector<RbfSample> one{{{0.0, 1.0}, 0.25}};
  s.fit(one);
  EXPECT_TRUE(s.using_fallback());
  EXPECT_EQ(s.predict_error({5.0, 5.0}), 0.25);
}

TEST(Surrogate, InterpolatesAndRevertsToMeanFarAway) {
  std::mt19937_64 rng(12);
  auto samples = random_samples(rng, 10, 3);
  Surrogate s;
  s.fit(samples);
  ASSERT_FALSE(s.using_fallback());
  double mean = 0.0;
  for (const auto& x : samples) {
    EXPECT_NEAR(s.predict_raw(x.x), x.y, 1e-5);
    mean += x.y / static_cast<double>(samples.size());
  }
  EXPECT_NEAR(s.predict_raw({1e3, -1e3, 1e3}), mean, 1e-12);
}

TEST(Surrogate, InfillPicksFarthestCandidate) {
  std::mt19937_64 rng(8);
  Surrogate s;
  s.fit(random_samples(rng, 8, 2));
  std::vector<FeatureVector> cands{{0.0, 0.0}, {50.0, 50.0}, {0.1, 0.1}};
  const double before = s.predict_raw(cands[1]);
  EXPECT_EQ(s.add_infill_point(cands), 1u);
  EXPECT_NEAR(s.predict_raw(cands[1]), before, 1e-6);
}

TEST(KendallTau, Examples) {
  const std::vector<std::size_t> a{0, 1, 2, 3}, b{0, 2, 1, 3}, r{3, 2, 1, 0};
  EXPECT_DOUBLE_EQ(kendall_tau(a, a), 1.0);
  EXPECT_DOUBLE_EQ(kendall_tau(a, r), -1.0);
  EXPECT_NEAR(kendall_tau(a, b), 4.0 / 6.0, 1e-12);
  EXPECT_THROW(kendall_tau(a, std::vector<std::size_t>{0, 1}), Error);
}

TEST(KendallTau, MatchesPairwiseEnumeration) {
  std::mt19937_64 rng(9);
  for (int t = 0; t < 1000; ++t) {
    const std::size_t n = 2 + static_cast<std::size_t>(t % 19);
    std::vector<std::size_t> a(n), b(n);
    std::iota(a.begin(), a.end(), 0);
    std::iota(b.begin(), b.end(), 0);
    std::shuffle(a.begin(), a.end(), rng);
    std::shuffle(b.begin(), b.end(), rng);
    ASSERT_DOUBLE_EQ(kendall_tau(a, b), pairwise_tau(a, b));
  }
}

TEST(Threshold, Arithmetic) {
  const auto s = update_threshold({}, 0.80, 0.95, 2910000);
  EXPECT_NEAR(s.h_t, 0.1713, 1e-4);
  EXPECT_NEAR(s.gamma(), 1.0 - s.h_t, 1e-15);
  EXPECT_EQ(update_threshold({}, 1.0, 0.93, 123).h_t, 1.0 - 0.93);
  EXPECT_EQ(update_threshold({}, 0.0, 0.7, 1000000).h_t, 0.0);
  EXPECT_EQ(ThresholdState{}.h_t, 1.0);
}

TEST(Threshold, Monotonicity) {
  for (double tau : {0.1, 0.5, 0.9, 1.0}) {
    EXPECT_GT(update_threshold({}, tau, 0.5, 2000000).h_t, update_threshold({}, tau, 0.6, 2000000).h_t);
    if (tau < 1.0) {
      EXPECT_LT(update_threshold({}, tau, 0.5, 2000000).h_t, update_threshold({}, tau, 0.5, 3000000).h_t);
    }
  }
}

TEST(PenaltyFitness, Examples) {
  EXPECT_DOUBLE_EQ(penalty_fitness(0.9, 3e6, 3e6, 5e6, 0.6), 0.6 * 0.9);
  EXPECT_NEAR(penalty_fitness(0.95, 2.91e6, 3e6, 5e6, 0.82873), 0.7796, 1e-4);
  EXPECT_DOUBLE_EQ(penalty_fitness(0.95, 4e6, 3e6, 5e6, 0.0), -0.5);
  EXPECT_THROW(penalty_fitness(0.9, 1, 3e6, 3e6, 0.5), Error);
  for (double c = 0; c <= 6e6; c += 2.5e5) EXPECT_LE(penalty_fitness(0.9, c, 3e6, 5e6, 0.4), 0.4 * 0.9);
}

TEST(EarlyFullTau, PerfectAgreement) {
  std::vector<EvalRecord> recs;
  for (std::uint64_t i = 0; i < 6; ++i) {
    EvalRecord r;
    r.id = i;
    r.early_acc = 0.1 * double(i);
    r.full_acc = 0.2 + 0.1 * double(i);
    recs.push_back(r);
  }
  EXPECT_EQ(early_full_tau(recs), 1.0);
  recs.resize(1);
  EXPECT_FALSE(early_full_tau(recs).has_value());
}

}  // namespace
}  // namespace metanas
