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
#include <atomic>
#include <cmath>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "json.hpp"
#include "metanas/config.hpp"
#include "metanas/evaluator.hpp"
#include "metanas/genetic.hpp"
#include "metanas/moea.hpp"
#include "metanas/surrogate.hpp"

namespace metanas {

inline constexpr const char* kCheckpointFormat = "metanas-checkpoint";
inline constexpr int kCheckpointVersion = 1;

/// Runs `fn(i)` for i in [0, n) on up to `workers` threads. Each index is
/// handled exactly once; callers write results into per-index slots.
template <typename Fn>
void parallel_for(std::size_t n, int workers, Fn&& fn) {
  const auto threads = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, workers)));
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) fn(i);
    });
  for (auto& th : pool) th.join();
}

// ---------------------------------------------------------------------------
// Evaluator and step-size construction from a config

inline std::unique_ptr<Evaluator> make_evaluator(const SearchConfig& cfg) {
  MacroConfig macro = cfg.resolved_macro();
  if (cfg.evaluator == "oracle") return std::make_unique<OracleEvaluator>(macro);
  std::shared_ptr<Dataset> data;
  if (cfg.data_source == "idx") {
    data = std::make_shared<Dataset>(load_idx_dataset(cfg.idx_images, cfg.idx_labels, cfg.idx_limit));
    // The file decides the input shape and class count unless pinned.
    if (!cfg.input_channels) macro.input_channels = data->sample_shape.channels;
    if (!cfg.input_height) macro.input_height = data->sample_shape.height;
    if (!cfg.input_width) macro.input_width = data->sample_shape.width;
    if (!cfg.num_classes) macro.num_classes = data->num_classes;
  } else {
    SyntheticSpec spec;
    spec.classes = macro.num_classes;
    spec.samples = cfg.data_samples;
    spec.height = macro.input_height;
    spec.width = macro.input_width;
    spec.channels = macro.input_channels;
    spec.noise = cfg.data_noise;
    spec.seed = cfg.data_seed;
    try {
      data = std::make_shared<Dataset>(generate_synthetic_dataset(spec));
    } catch (const Error& e) {
      fail(ErrorKind::invalid_config, std::string("data: ") + e.what());
    }
  }
  return std::make_unique<TinyTrainerEvaluator>(macro, std::move(data), cfg.trainer);
}

/// The controller pretraining task named by [task], or by default the
/// evaluator's own task on a random architecture.
inline std::unique_ptr<PretrainTask> make_pretrain_task(const SearchConfig& cfg, const Evaluator& evaluator) {
  const std::uint64_t seed = stream_seed(cfg.seed, "pretrain");
  if (cfg.task.kind == "bowl")
    return std::make_unique<QuadraticBowl>(static_cast<std::size_t>(cfg.task.bowl_dim), cfg.task.bowl_min_eig,
                                           cfg.task.bowl_max_eig, seed);
  Rng rng = make_stream(cfg.seed, "pretrain-arch");
  auto task = evaluator.pretrain_task(random_individual(cfg.space, rng), seed);
  if (!task) fail(ErrorKind::invalid_config, "evaluator '" + cfg.evaluator + "' has no network pretraining task");
  return task;
}

inline PretrainResult run_pretraining(const SearchConfig& cfg, const PretrainTask& task,
                                      const std::function<void(int, double)>& progress = {}) {
  Rng rng = make_stream(cfg.seed, "metalr-init");
  const MetaLrParams init = init_metalr_params(rng, cfg.metalr_hidden, cfg.alpha_max, cfg.initial_alpha);
  return pretrain_controller(task, init, cfg.es, stream_seed(cfg.seed, "es-master"), progress);
}

// ---------------------------------------------------------------------------
// Search state

struct DiagnosticsRow {
  int gen = 0;
  std::optional<double> tau;
  double h_t = 1.0;
  int n_full_evals = 0;
  int n_surrogate_only = 0;
};

struct GenerationSummary {
  int gen = 0;
  std::optional<double> tau;
  double h_t = 1.0;
  double best_f1 = 1.0;
  std::size_t front_size = 0;
  int full_evals = 0;
};

struct SearchState {
  int generation = 0;
  bool finalized = false;
  std::uint64_t next_id = 1;
  std::uint64_t offspring_counter = 0;  // global offspring index for the period rule
  ThresholdState threshold;
  bool tau_known = false;
  std::vector<Individual> population;     // ordered by id
  std::vector<RankedIndividual> ranks;    // aligned with `population`
  std::vector<EvalRecord> archive;        // one record per id, ascending
  std::vector<DiagnosticsRow> diagnostics;
  std::uint64_t archive_offset = 0;       // bytes of archive.jsonl covered by this state
  std::uint64_t offspring_full_evals = 0;
  std::uint64_t confirmation_evals = 0;
  std::optional<MetaLrParams> metalr_params;
  std::optional<LrSchedule> metalr_schedule;
  /// Front-0 objectives after initialization and after each generation.
  std::vector<std::vector<ObjectiveVector>> front_history;

  std::uint64_t full_evals() const noexcept { return offspring_full_evals + confirmation_evals; }

  const EvalRecord& record(std::uint64_t id) const {
    const auto it = std::lower_bound(archive.begin(), archive.end(), id,
                                     [](const EvalRecord& r, std::uint64_t v) { return r.id < v; });
    if (it == archive.end() || it->id != id) fail(ErrorKind::invalid_arguments, "no record for id " + std::to_string(id));
    return *it;
  }
  EvalRecord& record(std::uint64_t id) { return const_cast<EvalRecord&>(std::as_const(*this).record(id)); }
};

/// Objectives of an archived individual: the full-training error when known,
/// else the surrogate's prediction at its gate, else the early error.
/// Failed evaluations get the worst error.
inline ObjectiveVector record_objectives(const EvalRecord& r) {
  const auto f2 = static_cast<double>(r.params);
  if (r.failed) return {1.0, f2};
  if (r.full_acc) return {1.0 - *r.full_acc, f2};
  if (r.predicted_error) return {*r.predicted_error, f2};
  return {1.0 - r.early_acc, f2};
}

inline nlohmann::ordered_json archive_line(const EvalRecord& r) {
  nlohmann::ordered_json j;
  j["id"] = r.id;
  j["gen"] = r.gen;
  j["early_acc"] = r.early_acc;
  j["full_acc"] = r.full_acc ? nlohmann::ordered_json(*r.full_acc) : nlohmann::ordered_json(nullptr);
  j["params"] = r.params;
  j["predicted_error"] =
      r.predicted_error ? nlohmann::ordered_json(*r.predicted_error) : nlohmann::ordered_json(nullptr);
  j["provenance"] = std::string(to_string(r.provenance));
  return j;
}

inline std::string diagnostics_csv(const std::vector<DiagnosticsRow>& rows) {
  std::string out = "gen,tau,H_t,n_full_evals,n_surrogate_only\n";
  for (const auto& d : rows)
    out += std::to_string(d.gen) + ',' + (d.tau ? format_double(*d.tau) : std::string()) + ',' +
           format_double(d.h_t) + ',' + std::to_string(d.n_full_evals) + ',' + std::to_string(d.n_surrogate_only) +
           '\n';
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoint serialization

namespace detail {

inline nlohmann::ordered_json record_to_json(const EvalRecord& r) {
  nlohmann::ordered_json j = archive_line(r);
  j["failed"] = r.failed;
  j["features"] = r.features;
  return j;
}

inline EvalRecord record_from_json(const nlohmann::json& j) {
  EvalRecord r;
  r.id = j.at("id").get<std::uint64_t>();
  r.gen = j.at("gen").get<int>();
  r.early_acc = j.at("early_acc").get<double>();
  if (!j.at("full_acc").is_null()) r.full_acc = j.at("full_acc").get<double>();
  r.params = j.at("params").get<std::uint64_t>();
  if (!j.at("predicted_error").is_null()) r.predicted_error = j.at("predicted_error").get<double>();
  r.provenance = provenance_from_string(j.at("provenance").get<std::string>());
  r.failed = j.at("failed").get<bool>();
  r.features = j.at("features").get<FeatureVector>();
  return r;
}

inline nlohmann::ordered_json optional_json(const std::optional<double>& v) {
  return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
}

}  // namespace detail

inline std::string checkpoint_to_json(const SearchConfig& cfg, const SearchState& s) {
  nlohmann::ordered_json j;
  j["format"] = kCheckpointFormat;
  j["version"] = kCheckpointVersion;
  j["config_hash"] = config_hash(cfg);
  j["config"] = canonical_config(cfg);
  j["generation"] = s.generation;
  j["finalized"] = s.finalized;
  j["next_id"] = s.next_id;
  j["offspring_counter"] = s.offspring_counter;
  j["threshold"] = {{"h_t", s.threshold.h_t}, {"tau", s.threshold.tau}, {"tau_known", s.tau_known}};
  j["offspring_full_evals"] = s.offspring_full_evals;
  j["confirmation_evals"] = s.confirmation_evals;
  auto& pop = j["population"] = nlohmann::ordered_json::array();
  for (const auto& ind : s.population)
    pop.push_back({{"id", ind.id}, {"birth_generation", ind.birth_generation}, {"genotype", serialize(ind)}});
  auto& arch = j["archive"] = nlohmann::ordered_json::array();
  for (const auto& r : s.archive) arch.push_back(detail::record_to_json(r));
  j["archive_offset"] = s.archive_offset;
  auto& diag = j["diagnostics"] = nlohmann::ordered_json::array();
  for (const auto& d : s.diagnostics)
    diag.push_back({{"gen", d.gen},
                    {"tau", detail::optional_json(d.tau)},
                    {"h_t", d.h_t},
                    {"n_full_evals", d.n_full_evals},
                    {"n_surrogate_only", d.n_surrogate_only}});
  auto& hist = j["front_history"] = nlohmann::ordered_json::array();
  for (const auto& front : s.front_history) {
    auto row = nlohmann::ordered_json::array();
    for (const auto& o : front) row.push_back({o.f1, o.f2});
    hist.push_back(std::move(row));
  }
  auto& lr = j["metalr"] = nlohmann::ordered_json::object();
  if (s.metalr_params) lr["params"] = nlohmann::ordered_json::parse(params_to_json(*s.metalr_params));
  if (s.metalr_schedule) lr["schedule"] = schedule_to_csv(*s.metalr_schedule);
  return j.dump(1) + "\n";
}

struct LoadedCheckpoint {
  SearchConfig config;
  SearchState state;
};

/// Parses a checkpoint. Unreadable or inconsistent content is
/// corrupt_checkpoint; a foreign format version is version_mismatch.
inline LoadedCheckpoint checkpoint_from_json(std::string_view text) {
  LoadedCheckpoint out;
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::corrupt_checkpoint, std::string("checkpoint is not valid JSON: ") + e.what());
  }
  try {
    if (j.at("format").get<std::string>() != kCheckpointFormat)
      fail(ErrorKind::corrupt_checkpoint, "not a checkpoint file");
    if (j.at("version").get<int>() != kCheckpointVersion)
      fail(ErrorKind::version_mismatch, "checkpoint version " + std::to_string(j.at("version").get<int>()) +
                                            " is not supported");
    try {
      out.config = parse_config(j.at("config").get<std::string>());
    } catch (const Error& e) {
      fail(ErrorKind::corrupt_checkpoint, std::string("embedded config: ") + e.what());
    }
    if (config_hash(out.config) != j.at("config_hash").get<std::string>())
      fail(ErrorKind::corrupt_checkpoint, "embedded config does not match its hash");
    auto& s = out.state;
    s.generation = j.at("generation").get<int>();
    s.finalized = j.at("finalized").get<bool>();
    s.next_id = j.at("next_id").get<std::uint64_t>();
    s.offspring_counter = j.at("offspring_counter").get<std::uint64_t>();
    s.threshold.h_t = j.at("threshold").at("h_t").get<double>();
    s.threshold.tau = j.at("threshold").at("tau").get<double>();
    s.tau_known = j.at("threshold").at("tau_known").get<bool>();
    s.offspring_full_evals = j.at("offspring_full_evals").get<std::uint64_t>();
    s.confirmation_evals = j.at("confirmation_evals").get<std::uint64_t>();
    for (const auto& p : j.at("population")) {
      Individual ind = deserialize(p.at("genotype").get<std::string>(), p.at("id").get<std::uint64_t>());
      ind.birth_generation = p.at("birth_generation").get<int>();
      s.population.push_back(std::move(ind));
    }
    for (const auto& r : j.at("archive")) s.archive.push_back(detail::record_from_json(r));
    s.archive_offset = j.at("archive_offset").get<std::uint64_t>();
    for (const auto& d : j.at("diagnostics")) {
      DiagnosticsRow row;
      row.gen = d.at("gen").get<int>();
      if (!d.at("tau").is_null()) row.tau = d.at("tau").get<double>();
      row.h_t = d.at("h_t").get<double>();
      row.n_full_evals = d.at("n_full_evals").get<int>();
      row.n_surrogate_only = d.at("n_surrogate_only").get<int>();
      s.diagnostics.push_back(row);
    }
    for (const auto& row : j.at("front_history")) {
      std::vector<ObjectiveVector> front;
      for (const auto& o : row) front.push_back({o.at(0).get<double>(), o.at(1).get<double>()});
      s.front_history.push_back(std::move(front));
    }
    const auto& lr = j.at("metalr");
    if (lr.contains("params")) s.metalr_params = params_from_json(lr.at("params").dump());
    if (lr.contains("schedule"))
      s.metalr_schedule = schedule_from_csv(lr.at("schedule").get<std::string>(), out.config.alpha_max);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::corrupt_checkpoint, std::string("checkpoint field: ") + e.what());
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::version_mismatch || e.kind() == ErrorKind::corrupt_checkpoint) throw;
    fail(ErrorKind::corrupt_checkpoint, e.what());
  }
  auto& s = out.state;
  if (!std::is_sorted(s.archive.begin(), s.archive.end(),
                      [](const EvalRecord& a, const EvalRecord& b) { return a.id <= b.id; }))
    fail(ErrorKind::corrupt_checkpoint, "archive ids are not strictly increasing");
  if (s.population.size() != static_cast<std::size_t>(out.config.population_size))
    fail(ErrorKind::corrupt_checkpoint, "population size differs from the configuration");
  for (const auto& ind : s.population) {
    if (ind.id >= s.next_id) fail(ErrorKind::corrupt_checkpoint, "population id beyond the id counter");
    try {
      (void)s.record(ind.id);
    } catch (const Error&) {
      fail(ErrorKind::corrupt_checkpoint, "population member without an archive record");
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Engine

/// The generational loop. Every random draw comes from a stream keyed by the
/// master seed and a (tag, generation, index) path, so a run can be resumed
/// from the serialized counters alone and worker count never affects results.
class Engine {
 public:
  Engine(SearchConfig cfg, std::filesystem::path out_dir, std::shared_ptr<const Evaluator> evaluator = nullptr)
      : cfg_(std::move(cfg)), out_(std::move(out_dir)), evaluator_(std::move(evaluator)) {
    cfg_.check();
    if (!evaluator_) evaluator_ = make_evaluator(cfg_);
    std::error_code ec;
    if (!out_.empty()) std::filesystem::create_directories(out_, ec);
    if (ec) fail(ErrorKind::io_failure, "cannot create " + out_.string() + ": " + ec.message());
  }

  /// Restores a run from `out_dir/checkpoint.json`. When `expected` is given
  /// its hash must match the checkpoint's configuration. `workers` only sizes
  /// the pool.
  static Engine resume(const std::filesystem::path& out_dir, const std::optional<SearchConfig>& expected = {},
                       std::optional<int> workers = {}, std::shared_ptr<const Evaluator> evaluator = nullptr) {
    std::string text;
    try {
      text = read_file(out_dir / "checkpoint.json");
    } catch (const Error& e) {
      fail(ErrorKind::corrupt_checkpoint, e.what());
    }
    auto loaded = checkpoint_from_json(text);
    if (expected && config_hash(*expected) != config_hash(loaded.config))
      fail(ErrorKind::version_mismatch, "checkpoint was written under a different configuration");
    if (workers) loaded.config.workers = *workers;
    Engine e(loaded.config, out_dir, std::move(evaluator));
    e.state_ = std::move(loaded.state);
    e.initialized_ = true;
    e.build_lr_source();
    e.rerank();
    if (!out_dir.empty()) {
      const auto archive = out_dir / "archive.jsonl";
      std::error_code ec;
      const auto size = std::filesystem::exists(archive) ? std::filesystem::file_size(archive, ec) : 0;
      if (ec || size < e.state_.archive_offset)
        fail(ErrorKind::corrupt_checkpoint, "archive.jsonl is shorter than the checkpoint records");
      std::filesystem::resize_file(archive, e.state_.archive_offset, ec);
      if (ec) fail(ErrorKind::io_failure, "cannot truncate archive.jsonl: " + ec.message());
    }
    return e;
  }

  const SearchConfig& config() const noexcept { return cfg_; }
  const SearchState& state() const noexcept { return state_; }
  const Evaluator& evaluator() const noexcept { return *evaluator_; }
  bool initialized() const noexcept { return initialized_; }
  bool done() const noexcept { return state_.finalized; }

  std::function<void(const GenerationSummary&)> on_generation;
  std::function<void(const std::string&)> on_log;

  /// Random initial population (or `seeds`, renumbered), early evaluation of
  /// every member, and ranking on early error.
  void initialize(std::vector<Individual> seeds = {}) {
    if (initialized_) fail(ErrorKind::invalid_arguments, "engine already initialized");
    prepare_lr();
    IdSequence ids(state_.next_id);
    std::vector<Individual> pop;
    if (seeds.empty()) {
      Rng rng = make_stream(cfg_.seed, "init");
      for (int i = 0; i < cfg_.population_size; ++i) pop.push_back(random_individual(cfg_.space, rng, ids.next(), 0));
    } else {
      if (seeds.size() != static_cast<std::size_t>(cfg_.population_size))
        fail(ErrorKind::invalid_arguments, "seed population must have population_size members");
      for (auto& ind : seeds) {
        ind.id = ids.next();
        ind.birth_generation = 0;
        pop.push_back(std::move(ind));
      }
    }
    state_.next_id = ids.peek();
    const auto early = evaluate_all(pop, cfg_.early_epochs);
    std::vector<EvalRecord> recs;
    for (std::size_t i = 0; i < pop.size(); ++i) recs.push_back(early_record(pop[i], early[i], 0));
    state_.population = std::move(pop);
    for (auto& r : recs) state_.archive.push_back(std::move(r));
    append_archive(state_.archive);
    rerank();
    record_front();
    initialized_ = true;
    persist();
  }

  /// One generation: mating selection, variation, early evaluation, the
  /// surrogate gate, full evaluation of admitted offspring, survivor
  /// selection, and the threshold update.
  void run_generation() {
    if (!initialized_) fail(ErrorKind::invalid_arguments, "engine not initialized");
    if (state_.finalized) fail(ErrorKind::invalid_arguments, "run already finalized");
    const int g = state_.generation + 1;
    auto offspring = make_offspring(g);
    const auto early = evaluate_all(offspring, cfg_.early_epochs);
    std::vector<EvalRecord> recs;
    for (std::size_t i = 0; i < offspring.size(); ++i) recs.push_back(early_record(offspring[i], early[i], g));

    // Gate every offspring against the threshold in force at generation start.
    const double h_gate = state_.threshold.h_t;
    std::optional<Surrogate> model;
    if (cfg_.surrogate_enabled) model = fit_surrogate();
    std::vector<FeatureVector> candidates;
    for (const auto& r : recs) candidates.push_back(r.features);
    std::vector<std::size_t> admitted;
    int surrogate_only = 0;
    for (std::size_t i = 0; i < recs.size(); ++i) {
      if (recs[i].failed) continue;
      if (model) {
        const double h = model->predict_error(recs[i].features);
        recs[i].predicted_error = h;
        if (h > h_gate) {
          recs[i].provenance = Provenance::surrogate_only;
          ++surrogate_only;
          model->add_infill_point(candidates);
          continue;
        }
      }
      admitted.push_back(i);
    }

    std::vector<Individual> to_train;
    for (std::size_t i : admitted) to_train.push_back(offspring[i]);
    const auto full = evaluate_all(to_train, cfg_.full_epochs);
    for (std::size_t k = 0; k < admitted.size(); ++k) apply_full(recs[admitted[k]], full[k]);
    state_.offspring_full_evals += admitted.size();

    std::vector<Candidate> parents, children;
    for (const auto& ind : state_.population) parents.push_back({ind.id, record_objectives(state_.record(ind.id))});
    for (const auto& r : recs) children.push_back({r.id, record_objectives(r)});
    const auto survivors =
        environmental_selection(parents, children, static_cast<std::size_t>(cfg_.population_size));

    for (auto& r : recs) state_.archive.push_back(r);
    append_archive(recs);
    std::map<std::uint64_t, const Individual*> by_id;
    for (const auto& ind : state_.population) by_id[ind.id] = &ind;
    for (const auto& ind : offspring) by_id[ind.id] = &ind;
    std::vector<Individual> next;
    for (const auto& s : survivors) next.push_back(*by_id.at(s.id));
    state_.population = std::move(next);
    state_.ranks = survivors;

    update_threshold_from_population();
    record_front();
    state_.diagnostics.push_back({g, state_.tau_known ? std::optional<double>(state_.threshold.tau) : std::nullopt,
                                  state_.threshold.h_t, static_cast<int>(admitted.size()), surrogate_only});
    state_.generation = g;
    persist();
    report(g, static_cast<int>(admitted.size()));
  }

  /// Fully evaluates every population member still lacking a full result,
  /// re-ranks on true errors, and writes the front and best genotype.
  void finalize() {
    if (state_.finalized) return;
    std::vector<Individual> pending;
    for (const auto& ind : state_.population) {
      const auto& r = state_.record(ind.id);
      if (!r.full_acc && !r.failed) pending.push_back(ind);
    }
    const auto full = evaluate_all(pending, cfg_.full_epochs);
    std::vector<EvalRecord> lines;
    for (std::size_t i = 0; i < pending.size(); ++i) {
      auto& r = state_.record(pending[i].id);
      apply_full(r, full[i]);
      r.provenance = Provenance::fully_evaluated;
      lines.push_back(r);
    }
    state_.confirmation_evals += pending.size();
    append_archive(lines);
    rerank();
    state_.finalized = true;
    if (!out_.empty()) {
      std::ostringstream front;
      write_front_csv(front, state_.ranks);
      write_file(out_ / "front.csv", front.str());
      write_file(out_ / "best.genotype", serialize(best_individual()));
    }
    persist();
  }

  /// Continues from the current state through finalization. With
  /// `stop_after`, returns once that many generations exist (checkpointed).
  void run(std::optional<int> stop_after = {}) {
    if (!initialized_) initialize();
    while (state_.generation < cfg_.generations) {
      if (stop_after && state_.generation >= *stop_after) return;
      run_generation();
    }
    finalize();
  }

  /// Highest penalty fitness at the current gamma; ties go to fewer
  /// parameters, then the smaller id.
  const Individual& best_individual() const {
    double cmax = cfg_.complexity_max;
    if (cmax == 0.0)
      for (const auto& r : state_.ranks) cmax = std::max(cmax, r.objectives.f2);
    if (cmax == cfg_.c_target) cmax += 1.0;
    const double gamma = state_.threshold.gamma();
    std::size_t best = 0;
    double best_fit = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < state_.ranks.size(); ++i) {
      const auto& o = state_.ranks[i].objectives;
      const double fit = penalty_fitness(1.0 - o.f1, o.f2, cfg_.c_target, cmax, gamma);
      const auto& b = state_.ranks[best].objectives;
      if (fit > best_fit || (fit == best_fit && o.f2 < b.f2)) {
        best_fit = fit;
        best = i;
      }
    }
    return state_.population.at(best);
  }

  /// Hypervolume of the current front 0 with f2 scaled by `max_params`
  /// against the reference (1, 1).
  double front_hypervolume(double max_params) const {
    std::vector<ObjectiveVector> pts;
    for (const auto& r : state_.ranks)
      if (r.front == 0) pts.push_back({r.objectives.f1, r.objectives.f2 / max_params});
    return hypervolume(pts, {1.0, 1.0});
  }

 private:
  // -------------------------------------------------------------------------
  // Step sizes

  void prepare_lr() {
    if (!evaluator_->capabilities().uses_learning_rate || !cfg_.metalr_enabled) {
      build_lr_source();
      return;
    }
    const bool live = cfg_.metalr_mode == LrMode::live;
    if (!live && !cfg_.metalr_schedule_path.empty()) {
      state_.metalr_schedule = load_schedule(cfg_.metalr_schedule_path);
    } else if (live && !cfg_.metalr_params_path.empty()) {
      state_.metalr_params = load_params(cfg_.metalr_params_path);
    } else {
      log("pretraining the step-size controller");
      const auto task = make_pretrain_task(cfg_, *evaluator_);
      auto result = run_pretraining(cfg_, *task, [this](int step, double score) {
        log("  meta-step " + std::to_string(step + 1) + " score " + format_double(score));
      });
      state_.metalr_params = std::move(result.params);
      state_.metalr_schedule = std::move(result.schedule);
    }
    build_lr_source();
  }

  LrSchedule load_schedule(const std::string& path) const {
    try {
      return schedule_from_csv(read_file(path), cfg_.alpha_max);
    } catch (const Error& e) {
      fail(ErrorKind::invalid_config, "metalr.schedule: " + std::string(e.what()));
    }
  }

  MetaLrParams load_params(const std::string& path) const {
    try {
      return params_from_json(read_file(path));
    } catch (const Error& e) {
      fail(ErrorKind::invalid_config, "metalr.params: " + std::string(e.what()));
    }
  }

  void build_lr_source() {
    if (!evaluator_->capabilities().uses_learning_rate || !cfg_.metalr_enabled) {
      lr_ = std::make_unique<FixedLr>(cfg_.fixed_alpha);
    } else if (cfg_.metalr_mode == LrMode::live) {
      if (!state_.metalr_params) fail(ErrorKind::corrupt_checkpoint, "live step sizes need controller params");
      lr_ = std::make_unique<LiveLr>(std::make_shared<const MetaLrParams>(*state_.metalr_params));
    } else {
      if (!state_.metalr_schedule) fail(ErrorKind::corrupt_checkpoint, "replayed step sizes need a schedule");
      lr_ = std::make_unique<ReplayLr>(std::make_shared<const LrSchedule>(*state_.metalr_schedule));
    }
  }

  // -------------------------------------------------------------------------
  // Evaluation

  Metrics safe_evaluate(const Individual& ind, int epochs) const {
    Metrics m;
    try {
      auto lr = lr_->fresh_copy();
      m = evaluator_->evaluate(ind, epochs, *lr, stream_seed(cfg_.seed, "eval", {ind.id}));
      if (!std::isfinite(m.top1_acc)) m.failed = true;
    } catch (const std::exception&) {
      m = Metrics{};
      m.failed = true;
      m.epochs_trained = epochs;
    }
    if (m.params == 0) {
      try {
        m.params = evaluator_->parameter_count(ind);
      } catch (const std::exception&) {
      }
    }
    return m;
  }

  std::vector<Metrics> evaluate_all(const std::vector<Individual>& inds, int epochs) const {
    std::vector<Metrics> out(inds.size());
    parallel_for(inds.size(), cfg_.workers, [&](std::size_t i) { out[i] = safe_evaluate(inds[i], epochs); });
    return out;
  }

  EvalRecord early_record(const Individual& ind, const Metrics& m, int gen) const {
    EvalRecord r;
    r.id = ind.id;
    r.gen = gen;
    r.early_acc = m.failed ? 0.0 : m.top1_acc;
    r.params = m.params;
    r.failed = m.failed;
    r.provenance = Provenance::initial;
    r.features = featurize(ind, r.early_acc, std::max<std::uint64_t>(1, r.params));
    return r;
  }

  static void apply_full(EvalRecord& r, const Metrics& m) {
    r.full_acc = m.failed ? 0.0 : m.top1_acc;
    r.failed = r.failed || m.failed;
    r.provenance = Provenance::fully_evaluated;
  }

  std::optional<Surrogate> fit_surrogate() const {
    std::vector<RbfSample> samples;
    for (const auto& r : state_.archive)
      if (r.full_acc && !r.failed) samples.push_back({r.features, 1.0 - *r.full_acc});
    if (samples.empty()) return std::nullopt;
    Surrogate s;
    s.fit(samples);
    return s;
  }

  // -------------------------------------------------------------------------
  // Variation

  std::vector<Individual> make_offspring(int g) {
    const auto n = static_cast<std::size_t>(cfg_.population_size);
    Rng select_rng = make_stream(cfg_.seed, "select", {static_cast<std::uint64_t>(g)});
    const auto pairs = binary_tournament(state_.ranks, (n + 1) / 2, select_rng);
    IdSequence scratch(1);
    std::vector<Individual> out;
    for (std::size_t k = 0; k < pairs.size() && out.size() < n; ++k) {
      Rng rng = make_stream(cfg_.seed, "vary", {static_cast<std::uint64_t>(g), k});
      auto [a, b] = inter_crossover(state_.population[pairs[k].first], state_.population[pairs[k].second], rng,
                                    scratch, cfg_.crossover);
      for (CellKind kind : {CellKind::normal, CellKind::reduction}) {
        if (kind == CellKind::reduction && cfg_.space.shared_cell) break;
        if (bernoulli(rng, cfg_.crossover.intra_prob)) {
          auto [x, y] = intra_crossover(a.cell(kind), b.cell(kind), rng);
          a.cell(kind) = std::move(x);
          b.cell(kind) = std::move(y);
        }
      }
      if (cfg_.space.shared_cell) {
        sync_shared_cell(a);
        sync_shared_cell(b);
      }
      for (Individual* child : {&a, &b}) {
        if (out.size() == n) break;
        Individual c = period_mutation(*child, state_.offspring_counter++, cfg_.mutation, cfg_.space, rng, scratch);
        c.id = state_.next_id++;
        c.birth_generation = g;
        out.push_back(std::move(c));
      }
    }
    return out;
  }

  // -------------------------------------------------------------------------
  // Bookkeeping

  void rerank() {
    std::sort(state_.population.begin(), state_.population.end(),
              [](const Individual& a, const Individual& b) { return a.id < b.id; });
    std::vector<Candidate> cands;
    for (const auto& ind : state_.population) cands.push_back({ind.id, record_objectives(state_.record(ind.id))});
    state_.ranks = rank_population(cands);
  }

  void record_front() {
    std::vector<ObjectiveVector> front;
    for (const auto& r : state_.ranks)
      if (r.front == 0) front.push_back(r.objectives);
    state_.front_history.push_back(std::move(front));
  }

  void update_threshold_from_population() {
    const auto tau = early_full_tau(state_.archive);
    if (!tau) return;
    // Best survivor: lowest error, then fewest parameters, then smallest id.
    const RankedIndividual* best = nullptr;
    for (const auto& r : state_.ranks)
      if (!best || r.objectives.f1 < best->objectives.f1 ||
          (r.objectives.f1 == best->objectives.f1 && r.objectives.f2 < best->objectives.f2))
        best = &r;
    const auto params = std::max<std::uint64_t>(1, static_cast<std::uint64_t>(best->objectives.f2));
    state_.threshold = update_threshold(state_.threshold, *tau, 1.0 - best->objectives.f1, params, cfg_.param_scale);
    state_.tau_known = true;
  }

  void append_archive(const std::vector<EvalRecord>& recs) {
    std::string text;
    for (const auto& r : recs) text += archive_line(r).dump() + "\n";
    state_.archive_offset += text.size();
    if (!out_.empty() && !text.empty()) append_file(out_ / "archive.jsonl", text);
  }

  void persist() {
    if (out_.empty()) return;
    std::vector<DiagnosticsRow> rows = state_.diagnostics;
    write_file(out_ / "diagnostics.csv", diagnostics_csv(rows));
    const auto tmp = out_ / "checkpoint.json.tmp";
    write_file(tmp, checkpoint_to_json(cfg_, state_));
    std::error_code ec;
    std::filesystem::rename(tmp, out_ / "checkpoint.json", ec);
    if (ec) fail(ErrorKind::io_failure, "cannot write checkpoint: " + ec.message());
  }

  void report(int g, int full_evals) const {
    if (!on_generation) return;
    GenerationSummary s;
    s.gen = g;
    if (state_.tau_known) s.tau = state_.threshold.tau;
    s.h_t = state_.threshold.h_t;
    s.full_evals = full_evals;
    for (const auto& r : state_.ranks) {
      s.best_f1 = std::min(s.best_f1, r.objectives.f1);
      if (r.front == 0) ++s.front_size;
    }
    on_generation(s);
  }

  void log(const std::string& msg) const {
    if (on_log) on_log(msg);
  }

  SearchConfig cfg_;
  std::filesystem::path out_;
  std::shared_ptr<const Evaluator> evaluator_;
  std::unique_ptr<LrSource> lr_;
  SearchState state_;
  bool initialized_ = false;
};

}  // namespace metanas
