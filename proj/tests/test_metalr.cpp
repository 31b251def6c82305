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

#include <cmath>

#include "metanas/metalr.hpp"

namespace metanas {
namespace {

MetaLrParams fresh_params(std::uint64_t seed = 0) {
  Rng rng(seed);
  return init_metalr_params(rng);
}

TEST(MetaLrParams, LayoutLength) {
  EXPECT_EQ(MetaLrParams::length_for(20), 3u * (40 + 400 + 20) + 20 + 1 + 2);
  EXPECT_EQ(fresh_params().phi.size(), 1403u);
  EXPECT_NO_THROW(fresh_params().check());
}

TEST(StepController, AlphaStaysInsideOpenInterval) {
  Rng rng(3);
  std::uniform_real_distribution<double> loss(0.0, 50.0);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    MetaLrParams p = fresh_params(seed);
    std::normal_distribution<double> big(0.0, 5.0);
    if (seed % 2) for (auto& v : p.phi) v = big(rng);
    auto state = MetaLrState::fresh(p);
    for (int t = 0; t < 200; ++t) {
      auto [alpha, next] = step_controller(p, state, loss(rng));
      ASSERT_GT(alpha, 0.0);
      ASSERT_LT(alpha, p.alpha_max);
      state = std::move(next);
    }
  }
}

TEST(StepController, FirstAlphaNearInitialRate) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const MetaLrParams p = fresh_params(seed);
    for (double loss : {0.0, 0.5, 2.302585, 5.0}) {
      const auto [alpha, state] = step_controller(p, MetaLrState::fresh(p), loss);
      EXPECT_NEAR(alpha, 1e-3, 1e-4) << "seed " << seed << " loss " << loss;
    }
  }
}

TEST(StepController, Deterministic) {
  const MetaLrParams p = fresh_params(4);
  const auto s0 = MetaLrState::fresh(p);
  const auto [a1, s1] = step_controller(p, s0, 1.5);
  const auto [a2, s2] = step_controller(p, s0, 1.5);
  EXPECT_EQ(a1, a2);
  EXPECT_EQ(s1.h, s2.h);
  EXPECT_THROW(step_controller(p, s0, std::nan("")), Error);
  EXPECT_THROW(step_controller(p, s0, -1.0), Error);
}

TEST(Hswish, Values) {
  EXPECT_EQ(hswish(-4.0), 0.0);
  EXPECT_EQ(hswish(0.0), 0.0);
  EXPECT_DOUBLE_EQ(hswish(1.0), 4.0 / 6.0);
  EXPECT_EQ(hswish(5.0), 5.0);
}

TEST(SgdStep, Arithmetic) {
  std::vector<double> mu{1.0};
  sgd_step(mu, std::vector<double>{2.0}, 0.5, 0.0);
  EXPECT_EQ(mu[0], 0.0);
  std::vector<double> same{0.3, -0.7};
  sgd_step(same, std::vector<double>{0.0, 0.0}, 0.1, 0.0);
  EXPECT_EQ(same, (std::vector<double>{0.3, -0.7}));
  EXPECT_THROW(sgd_step(same, std::vector<double>{1.0}, 0.1), Error);
}

TEST(SgdStep, ContractsOnUnitQuadratic) {
  std::vector<double> mu{3.0, -4.0};
  double norm = 5.0;
  for (int t = 0; t < 20; ++t) {
    const std::vector<double> g = mu;  // gradient of 1/2 |mu|^2
    sgd_step(mu, g, 0.1, 0.0);
    const double next = std::hypot(mu[0], mu[1]);
    EXPECT_NEAR(next, 0.9 * norm, 1e-12);
    norm = next;
  }
}

TEST(SgdStep, MonotoneBelowStabilityLimit) {
  QuadraticBowl bowl;
  for (double alpha : {0.001, 0.01, 0.05, 0.099}) {
    auto mu = bowl.initial_weights();
    std::vector<double> g;
    double prev = bowl.loss_and_gradient(mu, 0, g);
    for (int t = 0; t < 100; ++t) {
      sgd_step(mu, g, alpha);
      const double f = bowl.loss_and_gradient(mu, 0, g);
      ASSERT_LT(f, prev);
      prev = f;
    }
  }
}

TEST(Schedule, ReplayLookupAndClamp) {
  LrSchedule s{{0, 1, 2}, {0.01, 0.02, 0.03}, 0.1};
  EXPECT_EQ(replay_schedule(s, 1), 0.02);
  EXPECT_EQ(replay_schedule(s, 100), 0.03);
  LrSchedule c{{0}, {0.005}, 0.1};
  for (std::uint64_t t = 0; t < 50; t += 7) EXPECT_EQ(replay_schedule(c, t), 0.005);
  EXPECT_THROW(replay_schedule(LrSchedule{}, 0), Error);
}

TEST(Schedule, CsvRoundTrip) {
  LrSchedule s{{0, 1, 5}, {0.001, 0.0123456789012345, 0.09}, 0.1};
  const std::string csv = schedule_to_csv(s);
  EXPECT_EQ(csv.substr(0, 11), "step,alpha\n");
  const auto back = schedule_from_csv(csv);
  EXPECT_EQ(back.steps, s.steps);
  EXPECT_EQ(back.alphas, s.alphas);
  EXPECT_THROW(schedule_from_csv("step,alpha\n1,0.1\n0,0.01\n"), Error);
  EXPECT_THROW(schedule_from_csv("step,alpha\n"), Error);
}

TEST(Params, JsonRoundTrip) {
  const MetaLrParams p = fresh_params(9);
  const auto back = params_from_json(params_to_json(p));
  EXPECT_EQ(back.phi, p.phi);
  EXPECT_EQ(back.h_dim, 20);
  EXPECT_THROW(params_from_json("{\"header\":{\"h_dim\":2,\"alpha_max\":0.1,\"version\":1},\"phi\":[1]}"),
               Error);
}

TEST(LrSources, FreshCopiesRestart) {
  auto sched = std::make_shared<const LrSchedule>(LrSchedule{{0, 1}, {0.01, 0.02}, 0.1});
  ReplayLr r(sched);
  EXPECT_EQ(r.next_alpha(1.0), 0.01);
  EXPECT_EQ(r.next_alpha(1.0), 0.02);
  EXPECT_EQ(r.fresh_copy()->next_alpha(1.0), 0.01);
  LiveLr live(std::make_shared<const MetaLrParams>(fresh_params()));
  EXPECT_NEAR(live.next_alpha(2.3), 1e-3, 1e-4);
}

TEST(Pretrain, ZeroSigmaLeavesParamsUnchanged) {
  QuadraticBowl bowl;
  EsConfig cfg;
  cfg.sigma = 0.0;
  cfg.meta_steps = 1;
  const MetaLrParams p = fresh_params();
  const auto res = pretrain_controller(bowl, p, cfg, 1);
  EXPECT_EQ(res.params.phi, p.phi);
  EXPECT_EQ(res.schedule.size(), cfg.inner_steps);
}

TEST(Pretrain, ElitistAndRecordsFullSchedule) {
  QuadraticBowl bowl(8, 0.5, 20.0, 3);
  EsConfig cfg;
  cfg.meta_steps = 5;
  cfg.inner_steps = 40;
  const auto res = pretrain_controller(bowl, fresh_params(2), cfg, 7);
  EXPECT_LE(res.final_score, res.initial_score);
  for (std::size_t k = 1; k < res.score_history.size(); ++k)
    EXPECT_LE(res.score_history[k], res.score_history[k - 1]);
  EXPECT_EQ(res.schedule.size(), 40u);
  EXPECT_NO_THROW(res.schedule.check());
}

}  // namespace
}  // namespace metanas
