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
#include <filesystem>
#include <set>

#include "metanas/engine.hpp"

namespace metanas {
namespace {

namespace fs = std::filesystem;

fs::path scratch_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("metanas_engine_" + name);
  fs::remove_all(dir);
  return dir;
}

SearchConfig oracle_config(int population = 20, int generations = 5, std::uint64_t seed = 0) {
  SearchConfig c;
  c.population_size = population;
  c.generations = generations;
  c.seed = seed;
  return c;
}

std::multiset<std::string> genotypes(const SearchState& s) {
  std::multiset<std::string> out;
  for (const auto& ind : s.population) out.insert(serialize(ind));
  return out;
}

TEST(Engine, MinimalPopulationIsEvaluatedAndRanked) {
  Engine e(oracle_config(2), "");
  e.initialize();
  const auto& s = e.state();
  ASSERT_EQ(s.population.size(), 2u);
  ASSERT_EQ(s.ranks.size(), 2u);
  for (const auto& ind : s.population) {
    const auto& r = s.record(ind.id);
    EXPECT_EQ(r.provenance, Provenance::initial);
    EXPECT_FALSE(r.full_acc.has_value());
    EXPECT_EQ(r.early_acc, oracle_evaluate(ind, e.config().early_epochs).top1_acc);
  }
  EXPECT_EQ(s.threshold.h_t, 1.0);
}

TEST(Engine, InitializationIsDeterministic) {
  Engine a(oracle_config(), ""), b(oracle_config(), "");
  a.initialize();
  b.initialize();
  EXPECT_EQ(checkpoint_to_json(a.config(), a.state()), checkpoint_to_json(b.config(), b.state()));
  Engine c(oracle_config(20, 5, 1), "");
  c.initialize();
  EXPECT_NE(genotypes(a.state()), genotypes(c.state()));
}

TEST(Engine, SingleGenerationRun) {
  Engine e(oracle_config(20, 1), "");
  e.run();
  EXPECT_EQ(e.state().generation, 1);
  EXPECT_EQ(e.state().diagnostics.size(), 1u);
  EXPECT_TRUE(e.state().finalized);
}

TEST(Engine, OffspringCountEqualsPopulationSize) {
  for (int ps : {2, 5, 20}) {
    Engine e(oracle_config(ps, 3), "");
    e.initialize();
    for (int g = 1; g <= 3; ++g) {
      const auto before = e.state().archive.size();
      const auto counter = e.state().offspring_counter;
      e.run_generation();
      EXPECT_EQ(e.state().archive.size() - before, static_cast<std::size_t>(ps));
      EXPECT_EQ(e.state().offspring_counter - counter, static_cast<std::uint64_t>(ps));
      EXPECT_EQ(e.state().population.size(), static_cast<std::size_t>(ps));
    }
  }
}

TEST(Engine, ArchiveIdsAreUniqueAndIncreasing) {
  Engine e(oracle_config(), "");
  e.run();
  const auto& a = e.state().archive;
  for (std::size_t i = 1; i < a.size(); ++i) ASSERT_LT(a[i - 1].id, a[i].id);
  EXPECT_EQ(a.back().id + 1, e.state().next_id);
}

TEST(Engine, IdempotentGenerationWithoutVariation) {
  auto cfg = oracle_config(6, 1);
  cfg.mutation.forced_rates = MutationRates{0.0, 0.0};
  cfg.mutation.node_add_remove_prob = 0.0;
  cfg.crossover.inter_swap_prob = 0.0;
  Rng rng(3);
  const Individual seed = random_individual(cfg.space, rng);
  Engine e(cfg, "");
  e.initialize(std::vector<Individual>(6, seed));
  const auto before = genotypes(e.state());
  e.run_generation();
  EXPECT_EQ(genotypes(e.state()), before);
  for (const auto& r : e.state().archive) EXPECT_EQ(r.params, e.state().archive.front().params);
}

TEST(Engine, FirstGenerationFullyEvaluatesEveryOffspring) {
  Engine e(oracle_config(), "");
  e.initialize();
  e.run_generation();
  EXPECT_EQ(e.state().diagnostics[0].n_full_evals, 20);
  EXPECT_EQ(e.state().diagnostics[0].n_surrogate_only, 0);
  // Oracle early accuracy is a fixed multiple of the full accuracy, so the
  // two rankings agree.
  ASSERT_TRUE(e.state().diagnostics[0].tau.has_value());
  EXPECT_EQ(*e.state().diagnostics[0].tau, 1.0);
}

TEST(Engine, GateNeverTrainsAboveThreshold) {
  Engine e(oracle_config(20, 5, 4), "");
  e.initialize();
  for (int g = 1; g <= 5; ++g) {
    const double h_gate = e.state().threshold.h_t;
    const auto before = e.state().archive.size();
    e.run_generation();
    int full = 0, surrogate = 0;
    for (std::size_t i = before; i < e.state().archive.size(); ++i) {
      const auto& r = e.state().archive[i];
      if (r.predicted_error && *r.predicted_error > h_gate) {
        EXPECT_FALSE(r.full_acc.has_value()) << "id " << r.id;
        EXPECT_EQ(r.provenance, Provenance::surrogate_only);
        ++surrogate;
      }
      if (r.full_acc) ++full;
    }
    EXPECT_EQ(full, e.state().diagnostics.back().n_full_evals);
    EXPECT_EQ(surrogate, e.state().diagnostics.back().n_surrogate_only);
  }
}

TEST(Engine, FullEvaluationFractionOverThreeGenerations) {
  Engine e(oracle_config(20, 3), "");
  e.initialize();
  for (int g = 0; g < 3; ++g) e.run_generation();
  const double fraction = static_cast<double>(e.state().offspring_full_evals) / 60.0;
  RecordProperty("full_eval_fraction", std::to_string(fraction));
  EXPECT_LE(fraction, 0.5);
}

TEST(Engine, FrontHypervolumeNeverDecreases) {
  Engine e(oracle_config(20, 3), "");
  e.initialize();
  for (int g = 0; g < 3; ++g) e.run_generation();
  double max_params = 0.0;
  for (const auto& r : e.state().archive) max_params = std::max(max_params, static_cast<double>(r.params));
  double previous = -1.0;
  for (const auto& front : e.state().front_history) {
    std::vector<ObjectiveVector> scaled;
    for (const auto& o : front) scaled.push_back({o.f1, o.f2 / max_params});
    const double hv = hypervolume(scaled, {1.0, 1.0});
    EXPECT_GE(hv, previous);
    previous = hv;
  }
}

TEST(Engine, BestFullyEvaluatedErrorNeverWorsens) {
  for (std::uint64_t seed : {0u, 1u, 2u}) {
    Engine e(oracle_config(20, 5, seed), "");
    e.initialize();
    double best = 1.0;
    for (int g = 0; g < 5; ++g) {
      e.run_generation();
      double now = 1.0;
      for (const auto& ind : e.state().population) {
        const auto& r = e.state().record(ind.id);
        if (r.full_acc) now = std::min(now, 1.0 - *r.full_acc);
      }
      EXPECT_LE(now, best) << "seed " << seed << " generation " << g + 1;
      best = now;
    }
  }
}

TEST(Engine, SurrogateToggleEvaluatesEveryOffspring) {
  auto cfg = oracle_config();
  cfg.surrogate_enabled = false;
  Engine e(cfg, "");
  e.run();
  for (const auto& d : e.state().diagnostics) {
    EXPECT_EQ(d.n_surrogate_only, 0);
    EXPECT_EQ(d.n_full_evals, 20);
  }
}

TEST(Engine, WorkerCountDoesNotChangeResults) {
  auto one = oracle_config();
  auto four = oracle_config();
  four.workers = 4;
  Engine a(one, ""), b(four, "");
  a.run();
  b.run();
  EXPECT_EQ(checkpoint_to_json(a.config(), a.state()), checkpoint_to_json(b.config(), b.state()));
}

TEST(Engine, FinalizationConfirmsPopulation) {
  Engine e(oracle_config(), "");
  e.run();
  for (const auto& ind : e.state().population) {
    const auto& r = e.state().record(ind.id);
    ASSERT_TRUE(r.full_acc.has_value());
    EXPECT_EQ(r.full_acc, oracle_evaluate(ind, e.config().full_epochs).top1_acc);
  }
  // best.genotype maximizes the penalty fitness at the final gamma.
  const auto& best = e.best_individual();
  double cmax = 0.0;
  for (const auto& r : e.state().ranks) cmax = std::max(cmax, r.objectives.f2);
  const double target = e.config().c_target;
  if (cmax == target) cmax += 1.0;
  const auto fitness = [&](const RankedIndividual& r) {
    return penalty_fitness(1.0 - r.objectives.f1, r.objectives.f2, target, cmax, e.state().threshold.gamma());
  };
  const auto it = std::find_if(e.state().ranks.begin(), e.state().ranks.end(),
                               [&](const RankedIndividual& r) { return r.id == best.id; });
  ASSERT_NE(it, e.state().ranks.end());
  for (const auto& r : e.state().ranks) EXPECT_LE(fitness(r), fitness(*it));
}

class FlakyEvaluator final : public Evaluator {
 public:
  EvaluatorCapabilities capabilities() const override { return {"flaky", false}; }
  Metrics evaluate(const Individual& ind, int epochs, LrSource&, std::uint64_t) const override {
    if (ind.id % 3 == 0) fail(ErrorKind::task_failure, "simulated failure");
    return oracle_evaluate(ind, epochs);
  }
  std::uint64_t parameter_count(const Individual& ind) const override { return count_parameters(ind, {}); }
};

TEST(Engine, EvaluatorFailuresAreRecordedNotFatal) {
  Engine e(oracle_config(10, 3), "", std::make_shared<FlakyEvaluator>());
  ASSERT_NO_THROW(e.run());
  int failed = 0;
  for (const auto& r : e.state().archive) {
    if (r.id % 3 != 0) continue;
    ++failed;
    EXPECT_TRUE(r.failed);
    EXPECT_EQ(record_objectives(r).f1, 1.0);
  }
  EXPECT_GT(failed, 0);
  EXPECT_EQ(e.state().population.size(), 10u);
}

// ---------------------------------------------------------------------------
// Checkpoints and artifacts

TEST(Checkpoint, ResumeMatchesUninterruptedRun) {
  const auto a = scratch_dir("resume_a"), b = scratch_dir("resume_b");
  Engine full(oracle_config(20, 2), a);
  full.run();
  Engine part(oracle_config(20, 2), b);
  part.run(1);
  ASSERT_EQ(part.state().generation, 1);
  Engine resumed = Engine::resume(b);
  resumed.run();
  EXPECT_EQ(genotypes(resumed.state()), genotypes(full.state()));
  for (const char* f : {"front.csv", "archive.jsonl", "diagnostics.csv", "best.genotype", "checkpoint.json"})
    EXPECT_EQ(read_file(a / f), read_file(b / f)) << f;
}

TEST(Checkpoint, ResumeTruncatesArchiveWrittenAfterCheckpoint) {
  const auto dir = scratch_dir("truncate");
  Engine e(oracle_config(), dir);
  e.run(1);
  const auto size = fs::file_size(dir / "archive.jsonl");
  append_file(dir / "archive.jsonl", "{\"partial\":true}\n");
  Engine::resume(dir);
  EXPECT_EQ(fs::file_size(dir / "archive.jsonl"), size);
}

ErrorKind resume_error(const fs::path& dir, const std::optional<SearchConfig>& expected = {}) {
  try {
    Engine::resume(dir, expected);
  } catch (const Error& e) {
    return e.kind();
  }
  return ErrorKind::io_failure;
}

TEST(Checkpoint, TruncatedFileIsCorrupt) {
  const auto dir = scratch_dir("corrupt");
  Engine e(oracle_config(), dir);
  e.run(1);
  const auto text = read_file(dir / "checkpoint.json");
  write_file(dir / "checkpoint.json", text.substr(0, text.size() / 2));
  EXPECT_EQ(resume_error(dir), ErrorKind::corrupt_checkpoint);
  write_file(dir / "checkpoint.json", "");
  EXPECT_EQ(resume_error(dir), ErrorKind::corrupt_checkpoint);
  fs::remove(dir / "checkpoint.json");
  EXPECT_EQ(resume_error(dir), ErrorKind::corrupt_checkpoint);
}

TEST(Checkpoint, DifferentConfigIsVersionMismatch) {
  const auto dir = scratch_dir("mismatch");
  Engine e(oracle_config(), dir);
  e.run(1);
  EXPECT_EQ(resume_error(dir, oracle_config(20, 5, 99)), ErrorKind::version_mismatch);
  auto text = read_file(dir / "checkpoint.json");
  const auto at = text.find("\"version\": 1");
  ASSERT_NE(at, std::string::npos);
  text.replace(at, 12, "\"version\": 7");
  write_file(dir / "checkpoint.json", text);
  EXPECT_EQ(resume_error(dir), ErrorKind::version_mismatch);
}

TEST(Checkpoint, RoundTripPreservesState) {
  Engine e(oracle_config(), "");
  e.initialize();
  e.run_generation();
  const auto text = checkpoint_to_json(e.config(), e.state());
  const auto loaded = checkpoint_from_json(text);
  EXPECT_EQ(checkpoint_to_json(loaded.config, loaded.state), text);
}

TEST(Artifacts, ExactlyFiveFiles) {
  const auto dir = scratch_dir("artifacts");
  Engine e(oracle_config(), dir);
  e.run();
  std::set<std::string> names;
  for (const auto& entry : fs::directory_iterator(dir)) names.insert(entry.path().filename().string());
  EXPECT_EQ(names, (std::set<std::string>{"front.csv", "archive.jsonl", "diagnostics.csv", "best.genotype",
                                          "checkpoint.json"}));
  const auto first = read_file(dir / "archive.jsonl").substr(0, read_file(dir / "archive.jsonl").find('\n'));
  const auto j = nlohmann::ordered_json::parse(first);
  std::vector<std::string> keys;
  for (const auto& [k, v] : j.items()) keys.push_back(k);
  EXPECT_EQ(keys, (std::vector<std::string>{"id", "gen", "early_acc", "full_acc", "params", "predicted_error",
                                            "provenance"}));
  EXPECT_EQ(read_file(dir / "diagnostics.csv").substr(0, 42), "gen,tau,H_t,n_full_evals,n_surrogate_only\n");
  EXPECT_TRUE(validate(deserialize(read_file(dir / "best.genotype"))).ok());
}

TEST(Engine, TinyTrainerSearchWithPretrainedSchedule) {
  auto cfg = parse_config(
      "[search]\nevaluator = tiny\npopulation_size = 4\ngenerations = 1\nearly_epochs = 1\nfull_epochs = 2\n"
      "[space]\nmin_nodes = 1\nmax_nodes = 2\n"
      "[macro]\nnum_cells = 1\nchannels = 2\ninput_height = 6\ninput_width = 6\nnum_classes = 2\n"
      "reduction_positions = 0\n"
      "[data]\nsamples = 40\n"
      "[es]\npopulation = 2\nmeta_steps = 1\ninner_steps = 5\n");
  Engine e(cfg, "");
  e.run();
  ASSERT_TRUE(e.state().metalr_schedule.has_value());
  EXPECT_EQ(e.state().metalr_schedule->size(), 5u);
  EXPECT_TRUE(e.state().finalized);
}

}  // namespace
}  // namespace metanas
