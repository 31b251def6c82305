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

// metanas: pretrain the step-size controller, run or resume a search,
// summarize a run directory, and enumerate small spaces.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "metanas/config.hpp"
#include "metanas/engine.hpp"
#include "metanas/enumerate.hpp"

namespace fs = std::filesystem;
using namespace metanas;

namespace {

enum ExitCode { kOk = 0, kConfig = 2, kTask = 3, kCheckpoint = 4, kBound = 5 };

int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::invalid_config:
    case ErrorKind::invalid_arguments:
    case ErrorKind::invalid_spec:
      return kConfig;
    case ErrorKind::corrupt_checkpoint:
    case ErrorKind::version_mismatch:
      return kCheckpoint;
    case ErrorKind::enumeration_bound:
      return kBound;
    default:
      return kTask;
  }
}

struct CommonOptions {
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
  std::string evaluator;
  std::vector<std::string> toggles;
  bool literal_eq8 = false;
  std::string out;
};

void add_config_options(CLI::App* app, CommonOptions& o) {
  app->add_option("--config", o.config_path, "INI configuration file")->check(CLI::ExistingFile);
  app->add_option("--override", o.overrides, "Set section.key=value after the file (repeatable)")
      ->allow_extra_args(false);
  app->add_option("--seed", o.seed, "Master seed (search.seed)");
}

void add_search_options(CLI::App* app, CommonOptions& o) {
  add_config_options(app, o);
  app->add_option("--workers", o.workers, "Evaluation threads (search.workers)")->check(CLI::PositiveNumber);
  app->add_option("--evaluator", o.evaluator, "Evaluator (search.evaluator)")
      ->check(CLI::IsMember({"oracle", "tiny"}));
  app->add_option("--toggle", o.toggles, "Disable a component (repeatable)")
      ->check(CLI::IsMember({"no-metalr", "no-surrogate", "no-period-mutation"}))
      ->allow_extra_args(false);
  app->add_flag("--literal-eq8", o.literal_eq8, "Base mutation rates inside the period window, elevated ones outside");
}

SearchConfig build_config(const CommonOptions& o) {
  SearchConfig cfg = o.config_path.empty() ? SearchConfig{} : load_config(o.config_path);
  for (const auto& kv : o.overrides) apply_override(cfg, kv);
  if (o.seed) apply_override(cfg, "search.seed=" + std::to_string(*o.seed));
  if (o.workers) apply_override(cfg, "search.workers=" + std::to_string(*o.workers));
  if (!o.evaluator.empty()) apply_override(cfg, "search.evaluator=" + o.evaluator);
  for (const auto& t : o.toggles) {
    if (t == "no-metalr") apply_override(cfg, "metalr.enabled=false");
    if (t == "no-surrogate") apply_override(cfg, "surrogate.enabled=false");
    if (t == "no-period-mutation") apply_override(cfg, "mutation.period_enabled=false");
  }
  if (o.literal_eq8) apply_override(cfg, "mutation.literal_eq8=true");
  cfg.check();
  return cfg;
}

std::string fixed(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

void print_generation_header() {
  std::printf("%4s  %8s  %9s  %9s  %6s  %10s\n", "gen", "tau", "H_t", "best_f1", "front", "full_evals");
}

void print_generation(const GenerationSummary& s) {
  std::printf("%4d  %8s  %9s  %9s  %6zu  %10d\n", s.gen, s.tau ? fixed(*s.tau).c_str() : "-",
              fixed(s.h_t).c_str(), fixed(s.best_f1).c_str(), s.front_size, s.full_evals);
  std::fflush(stdout);
}

void attach_reporting(Engine& engine) {
  engine.on_generation = [header = false](const GenerationSummary& s) mutable {
    if (!header) print_generation_header();
    header = true;
    print_generation(s);
  };
  engine.on_log = [](const std::string& msg) { std::printf("%s\n", msg.c_str()); };
}

void print_run_footer(const Engine& engine, const fs::path& out) {
  const auto& s = engine.state();
  std::printf("full-length evaluations: %llu offspring + %llu final confirmations\n",
              static_cast<unsigned long long>(s.offspring_full_evals),
              static_cast<unsigned long long>(s.confirmation_evals));
  if (s.finalized) std::printf("artifacts written to %s\n", out.string().c_str());
}

// ---------------------------------------------------------------------------

int cmd_pretrain(const CommonOptions& o) {
  SearchConfig cfg = build_config(o);
  if (!cfg.explicit_keys.count("task.kind"))
    fail(ErrorKind::invalid_config, "missing required key 'task.kind' in section [task]");
  std::unique_ptr<PretrainTask> task;
  if (cfg.task.kind == "network") {
    SearchConfig tiny = cfg;
    tiny.evaluator = "tiny";
    const auto evaluator = make_evaluator(tiny);
    task = make_pretrain_task(tiny, *evaluator);
  } else {
    task = make_pretrain_task(cfg, OracleEvaluator(cfg.resolved_macro()));
  }
  PretrainResult result;
  try {
    result = run_pretraining(cfg, *task, [](int step, double score) {
      std::printf("meta-step %d score %s\n", step + 1, format_double(score).c_str());
      std::fflush(stdout);
    });
  } catch (const Error& e) {
    if (exit_code_for(e.kind()) == kConfig) throw;
    fail(ErrorKind::task_failure, e.what());
  }
  const fs::path out = o.out.empty() ? fs::path("pretrain") : fs::path(o.out);
  write_file(out / "schedule.csv", schedule_to_csv(result.schedule));
  write_file(out / "controller.json", params_to_json(result.params));
  std::printf("initial meta-score %s\n", format_double(result.initial_score).c_str());
  std::printf("final meta-score %s\n", format_double(result.final_score).c_str());
  std::printf("wrote %s and %s\n", (out / "schedule.csv").string().c_str(), (out / "controller.json").string().c_str());
  return kOk;
}

int cmd_search(const CommonOptions& o, std::optional<int> stop_after) {
  const SearchConfig cfg = build_config(o);
  const fs::path out = o.out.empty() ? fs::path("metanas-run") : fs::path(o.out);
  Engine engine(cfg, out);
  attach_reporting(engine);
  engine.run(stop_after);
  print_run_footer(engine, out);
  return kOk;
}

int cmd_resume(const CommonOptions& o, const std::string& run_dir, std::optional<int> stop_after) {
  std::optional<SearchConfig> expected;
  if (!o.config_path.empty() || !o.overrides.empty() || o.seed || !o.evaluator.empty() || !o.toggles.empty() ||
      o.literal_eq8)
    expected = build_config(o);
  Engine engine = Engine::resume(run_dir, expected, o.workers);
  attach_reporting(engine);
  std::printf("resuming at generation %d of %d\n", engine.state().generation, engine.config().generations);
  engine.run(stop_after);
  print_run_footer(engine, run_dir);
  return kOk;
}

struct FrontRow {
  std::uint64_t id = 0;
  double f1 = 0.0, f2 = 0.0;
  int front = 0;
};

std::vector<FrontRow> read_front_csv(const fs::path& path) {
  std::istringstream in(read_file(path));
  std::string line;
  if (!std::getline(in, line) || line != "id,f1_error,f2_params,front,crowding")
    fail(ErrorKind::malformed_file, path.string() + ": unexpected header");
  std::vector<FrontRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    for (std::string c; std::getline(ss, c, ',');) cells.push_back(c);
    if (cells.size() != 5) fail(ErrorKind::malformed_file, path.string() + ": bad row '" + line + "'");
    FrontRow r;
    r.id = std::stoull(cells[0]);
    r.f1 = parse_double(cells[1]);
    r.f2 = parse_double(cells[2]);
    r.front = std::stoi(cells[3]);
    rows.push_back(r);
  }
  return rows;
}

int cmd_report(const std::string& run_dir, const std::string& plot_path) {
  const fs::path dir(run_dir);
  for (const char* name : {"front.csv", "checkpoint.json"})
    if (!fs::exists(dir / name)) {
      std::fprintf(stderr, "error: %s is missing %s\n", run_dir.c_str(), name);
      return kConfig;
    }
  const auto rows = read_front_csv(dir / "front.csv");
  const auto loaded = checkpoint_from_json(read_file(dir / "checkpoint.json"));

  std::vector<FrontRow> front;
  double max_params = 0.0;
  for (const auto& r : rows) {
    max_params = std::max(max_params, r.f2);
    if (r.front == 0) front.push_back(r);
  }
  for (const auto& f : loaded.state.front_history)
    for (const auto& o : f) max_params = std::max(max_params, o.f2);
  if (max_params <= 0.0) max_params = 1.0;
  std::stable_sort(front.begin(), front.end(), [](const FrontRow& a, const FrontRow& b) {
    return a.f1 != b.f1 ? a.f1 < b.f1 : a.f2 < b.f2;
  });

  std::printf("Pareto front: %zu members (sorted by f1)\n", front.size());
  std::printf("%8s  %12s  %12s\n", "id", "f1_error", "f2_params");
  for (const auto& r : front) std::printf("%8llu  %12s  %12.0f\n", static_cast<unsigned long long>(r.id), fixed(r.f1, 6).c_str(), r.f2);

  const auto scaled_hv = [&](const std::vector<ObjectiveVector>& pts) {
    std::vector<ObjectiveVector> s;
    for (const auto& p : pts) s.push_back({std::min(p.f1, 1.0), p.f2 / max_params});
    return hypervolume(s, {1.0, 1.0});
  };
  std::printf("\nHypervolume trajectory (reference f1 = 1, f2 = %.0f; f2 scaled by the reference)\n", max_params);
  std::printf("%6s  %s\n", "gen", "hypervolume");
  for (std::size_t g = 0; g < loaded.state.front_history.size(); ++g)
    std::printf("%6zu  %s\n", g, format_double(scaled_hv(loaded.state.front_history[g])).c_str());
  std::vector<ObjectiveVector> final_pts;
  for (const auto& r : front) final_pts.push_back({r.f1, r.f2});
  std::printf("%6s  %s\n", "final", format_double(scaled_hv(final_pts)).c_str());

  if (!plot_path.empty()) {
    std::string dat = "# f2_params f1_error (front 0, ascending parameters)\n";
    auto by_params = front;
    std::stable_sort(by_params.begin(), by_params.end(), [](const FrontRow& a, const FrontRow& b) { return a.f2 < b.f2; });
    for (const auto& r : by_params) dat += format_double(r.f2) + ' ' + format_double(r.f1) + '\n';
    write_file(plot_path, dat);
    std::printf("\nplot data written to %s\n", plot_path.c_str());
  }
  return kOk;
}

int cmd_enumerate(const CommonOptions& o) {
  const SearchConfig cfg = build_config(o);
  const double size = enumeration_size(cfg.space);
  std::printf("space size: %s genotypes\n", format_double(size).c_str());
  const auto result = enumerate_front(cfg);
  const fs::path out = o.out.empty() ? fs::path("front_fixture.csv") : fs::path(o.out);
  write_file(out, fixture_csv(result.front));
  std::printf("enumerated %zu genotypes, %zu distinct objective vectors, true front of %zu points\n",
              result.genotypes, result.distinct_objectives, result.front.size());
  std::printf("fixture written to %s\n", out.string().c_str());
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Surrogate-assisted multi-objective architecture search"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Help for every subcommand");

  CommonOptions pre, search, resume, enumerate;
  std::optional<int> stop_after_search, stop_after_resume;
  std::string resume_dir, report_dir, plot_path;

  auto* p = app.add_subcommand("pretrain", "Meta-train the step-size controller; writes schedule.csv and controller.json");
  add_config_options(p, pre);
  p->add_option("--out", pre.out, "Output directory (default: pretrain)");

  auto* s = app.add_subcommand("search", "Run a search and write its artifacts");
  add_search_options(s, search);
  s->add_option("--out", search.out, "Run directory (default: metanas-run)");
  s->add_option("--stop-after", stop_after_search, "Checkpoint and stop after N generations")->group("");

  auto* r = app.add_subcommand("resume", "Continue a checkpointed search");
  add_search_options(r, resume);
  r->add_option("--out", resume_dir, "Run directory holding checkpoint.json")->required();
  r->add_option("--stop-after", stop_after_resume, "Checkpoint and stop after N generations")->group("");

  auto* rep = app.add_subcommand("report", "Summarize a run directory");
  rep->add_option("run_dir", report_dir, "Run directory")->required();
  rep->add_option("--plot", plot_path, "Write gnuplot data of front 0 to this file");

  auto* e = app.add_subcommand("enumerate", "Brute-force the true front of a small space");
  add_config_options(e, enumerate);
  e->add_option("--out", enumerate.out, "Fixture CSV path (default: front_fixture.csv)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::CallForAllHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::ParseError& ex) {
    app.exit(ex);
    return kConfig;
  }

  try {
    if (*p) return cmd_pretrain(pre);
    if (*s) return cmd_search(search, stop_after_search);
    if (*r) return cmd_resume(resume, resume_dir, stop_after_resume);
    if (*rep) return cmd_report(report_dir, plot_path);
    if (*e) return cmd_enumerate(enumerate);
  } catch (const Error& ex) {
    std::fprintf(stderr, "error: %s\n", ex.what());
    return exit_code_for(ex.kind());
  } catch (const std::exception& ex) {
    std::fprintf(stderr, "error: %s\n", ex.what());
    return kTask;
  }
  return kOk;
}
