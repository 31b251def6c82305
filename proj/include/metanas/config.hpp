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

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <cctype>
#include <charconv>
#include <cstdint>
#include <functional>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "metanas/error.hpp"
#include "metanas/evaluator.hpp"
#include "metanas/genetic.hpp"
#include "metanas/io.hpp"
#include "metanas/metalr.hpp"
#include "metanas/random.hpp"
#include "metanas/surrogate.hpp"

namespace metanas {

enum class LrMode { replay, live };

struct PretrainTaskConfig {
  std::string kind;  // network | bowl; required by the pretrain command
  int bowl_dim = 16;
  double bowl_min_eig = 0.5;
  double bowl_max_eig = 20.0;
};

/// Everything that determines a run. `workers` and the output directory are
/// deliberately absent from the hash: they never change results.
struct SearchConfig {
  // [search]
  int population_size = 20;
  int generations = 5;
  int early_epochs = 35;
  int full_epochs = 100;
  std::uint64_t seed = 0;
  int workers = 1;
  std::string evaluator = "oracle";  // oracle | tiny
  double c_target = 3e6;
  double complexity_max = 0.0;  // 0: the largest complexity in the population

  SearchSpace space;
  MutationConfig mutation;
  CrossoverConfig crossover;

  // [macro]; unset fields take the evaluator's preset (oracle: 20 cells x 40
  // channels on 32x32x3 / 10 classes, tiny: MacroConfig::desk()).
  std::optional<int> num_cells, channels, input_height, input_width, input_channels, num_classes;
  std::optional<std::vector<int>> reduction_positions;

  // [data], tiny evaluator only
  std::string data_source = "synthetic";  // synthetic | idx
  int data_samples = 512;
  double data_noise = 0.1;
  std::uint64_t data_seed = 0;
  std::string idx_images, idx_labels;
  std::size_t idx_limit = 0;

  TrainerConfig trainer;

  // [metalr]
  bool metalr_enabled = true;
  LrMode metalr_mode = LrMode::replay;
  double fixed_alpha = 1e-2;
  int metalr_hidden = 20;
  double alpha_max = 0.1;
  double initial_alpha = 1e-3;
  std::string metalr_params_path;
  std::string metalr_schedule_path;

  EsConfig es;
  PretrainTaskConfig task;

  // [surrogate]
  bool surrogate_enabled = true;
  double rbf_lambda = kDefaultRbfLambda;
  double param_scale = kDefaultParamScale;

  /// Keys given explicitly (file or override), as "section.key".
  std::set<std::string> explicit_keys;

  MacroConfig resolved_macro() const {
    MacroConfig m = evaluator == "tiny" ? MacroConfig::desk() : MacroConfig{};
    if (num_cells) m.num_cells = *num_cells;
    if (channels) m.channels = *channels;
    if (input_height) m.input_height = *input_height;
    if (input_width) m.input_width = *input_width;
    if (input_channels) m.input_channels = *input_channels;
    if (num_classes) m.num_classes = *num_classes;
    if (reduction_positions) m.reduction_positions = reduction_positions;
    return m;
  }

  void check() const {
    if (population_size < 2) fail(ErrorKind::invalid_config, "search.population_size must be >= 2");
    if (generations < 1) fail(ErrorKind::invalid_config, "search.generations must be >= 1");
    if (early_epochs < 1) fail(ErrorKind::invalid_config, "search.early_epochs must be >= 1");
    if (early_epochs >= full_epochs)
      fail(ErrorKind::invalid_config, "search.early_epochs must be below search.full_epochs");
    if (workers < 1) fail(ErrorKind::invalid_config, "search.workers must be >= 1");
    if (evaluator != "oracle" && evaluator != "tiny")
      fail(ErrorKind::invalid_config, "search.evaluator must be oracle or tiny");
    if (complexity_max != 0.0 && complexity_max == c_target)
      fail(ErrorKind::invalid_config, "search.complexity_max must differ from search.c_target");
    space.check();
    mutation.check();
    if (crossover.inter_swap_prob < 0.0 || crossover.inter_swap_prob > 1.0 || crossover.intra_prob < 0.0 ||
        crossover.intra_prob > 1.0)
      fail(ErrorKind::invalid_config, "crossover probabilities must lie in [0, 1]");
    resolved_macro().check();
    if (data_source != "synthetic" && data_source != "idx")
      fail(ErrorKind::invalid_config, "data.source must be synthetic or idx");
    if (data_source == "idx" && (idx_images.empty() || idx_labels.empty()))
      fail(ErrorKind::invalid_config, "data.idx_images and data.idx_labels are required for idx data");
    trainer.check();
    if (!(fixed_alpha > 0.0)) fail(ErrorKind::invalid_config, "metalr.fixed_alpha must be positive");
    if (metalr_hidden < 1) fail(ErrorKind::invalid_config, "metalr.hidden must be >= 1");
    if (!(alpha_max > 0.0)) fail(ErrorKind::invalid_config, "metalr.alpha_max must be positive");
    if (!(initial_alpha > 0.0 && initial_alpha < alpha_max))
      fail(ErrorKind::invalid_config, "metalr.initial_alpha must lie in (0, alpha_max)");
    es.check();
    if (!task.kind.empty() && task.kind != "network" && task.kind != "bowl")
      fail(ErrorKind::invalid_config, "task.kind must be network or bowl");
    if (task.bowl_dim < 1 || !(task.bowl_min_eig > 0.0) || task.bowl_max_eig < task.bowl_min_eig)
      fail(ErrorKind::invalid_config, "task bowl settings are inconsistent");
    if (rbf_lambda < 0.0) fail(ErrorKind::invalid_config, "surrogate.lambda must be >= 0");
    if (!(param_scale > 0.0)) fail(ErrorKind::invalid_config, "surrogate.param_scale must be positive");
  }
};

namespace detail {

inline std::string trim(std::string s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

inline std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

template <typename T>
T parse_integer(const std::string& key, const std::string& text) {
  T value{};
  const auto t = trim(text);
  auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), value);
  if (ec != std::errc{} || ptr != t.data() + t.size() || t.empty())
    fail(ErrorKind::invalid_config, key + ": expected an integer, got '" + text + "'");
  return value;
}

inline double parse_real(const std::string& key, const std::string& text) {
  try {
    return parse_double(trim(text));
  } catch (const Error&) {
    fail(ErrorKind::invalid_config, key + ": expected a number, got '" + text + "'");
  }
}

inline bool parse_bool(const std::string& key, const std::string& text) {
  const auto t = trim(text);
  if (t == "true" || t == "1" || t == "yes" || t == "on") return true;
  if (t == "false" || t == "0" || t == "no" || t == "off") return false;
  fail(ErrorKind::invalid_config, key + ": expected a boolean, got '" + text + "'");
}

inline std::string format_bool(bool b) { return b ? "true" : "false"; }

inline std::string format_int_list(const std::vector<int>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

inline std::vector<OperationKind> parse_ops(const std::string& key, const std::string& text) {
  std::vector<OperationKind> ops;
  for (const auto& item : split_list(text)) {
    try {
      if (std::isdigit(static_cast<unsigned char>(item[0])))
        ops.push_back(operation_from_index(parse_integer<int>(key, item)));
      else
        ops.push_back(operation_from_name(item));
    } catch (const Error& e) {
      fail(ErrorKind::invalid_config, key + ": " + e.what());
    }
  }
  if (ops.empty()) fail(ErrorKind::invalid_config, key + ": empty operation list");
  return ops;
}

inline std::string format_ops(const std::vector<OperationKind>& ops) {
  std::vector<int> idx;
  for (auto op : ops) idx.push_back(to_index(op));
  return format_int_list(idx);
}

struct ConfigField {
  std::string section;
  std::string key;
  std::function<std::string(const SearchConfig&)> get;
  std::function<void(SearchConfig&, const std::string&)> set;
  bool hashed = true;

  std::string name() const { return section + "." + key; }
};

inline const std::vector<ConfigField>& config_fields() {
  using C = SearchConfig;
  static const std::vector<ConfigField> fields = [] {
    std::vector<ConfigField> f;
    const auto add = [&f](std::string sec, std::string key, auto get, auto set, bool hashed = true) {
      f.push_back({std::move(sec), std::move(key), get, set, hashed});
    };
    const auto integer = [&add](std::string sec, std::string key, int C::*member) {
      const std::string name = sec + "." + key;
      add(sec, key, [member](const C& c) { return std::to_string(c.*member); },
          [member, name](C& c, const std::string& v) { c.*member = parse_integer<int>(name, v); });
    };
    const auto real = [&add](std::string sec, std::string key, double C::*member) {
      const std::string name = sec + "." + key;
      add(sec, key, [member](const C& c) { return format_double(c.*member); },
          [member, name](C& c, const std::string& v) { c.*member = parse_real(name, v); });
    };
    const auto flag = [&add](std::string sec, std::string key, bool C::*member) {
      const std::string name = sec + "." + key;
      add(sec, key, [member](const C& c) { return format_bool(c.*member); },
          [member, name](C& c, const std::string& v) { c.*member = parse_bool(name, v); });
    };
    const auto text = [&add](std::string sec, std::string key, std::string C::*member) {
      add(sec, key, [member](const C& c) { return c.*member; },
          [member](C& c, const std::string& v) { c.*member = trim(v); });
    };
    const auto optional_int = [&add](std::string sec, std::string key, std::optional<int> C::*member) {
      const std::string name = sec + "." + key;
      add(sec, key, [member](const C& c) { return c.*member ? std::to_string(*(c.*member)) : "auto"; },
          [member, name](C& c, const std::string& v) {
            if (trim(v) == "auto")
              (c.*member).reset();
            else
              c.*member = parse_integer<int>(name, v);
          });
    };

    integer("search", "population_size", &C::population_size);
    integer("search", "generations", &C::generations);
    integer("search", "early_epochs", &C::early_epochs);
    integer("search", "full_epochs", &C::full_epochs);
    add("search", "seed", [](const C& c) { return std::to_string(c.seed); },
        [](C& c, const std::string& v) { c.seed = parse_integer<std::uint64_t>("search.seed", v); });
    add("search", "workers", [](const C& c) { return std::to_string(c.workers); },
        [](C& c, const std::string& v) { c.workers = parse_integer<int>("search.workers", v); }, false);
    text("search", "evaluator", &C::evaluator);
    real("search", "c_target", &C::c_target);
    real("search", "complexity_max", &C::complexity_max);

    add("space", "min_nodes", [](const C& c) { return std::to_string(c.space.min_nodes); },
        [](C& c, const std::string& v) { c.space.min_nodes = parse_integer<int>("space.min_nodes", v); });
    add("space", "max_nodes", [](const C& c) { return std::to_string(c.space.max_nodes); },
        [](C& c, const std::string& v) { c.space.max_nodes = parse_integer<int>("space.max_nodes", v); });
    add("space", "ops", [](const C& c) { return format_ops(c.space.ops); },
        [](C& c, const std::string& v) { c.space.ops = parse_ops("space.ops", v); });
    add("space", "p_hi", [](const C& c) { return format_double(c.space.p_hi); },
        [](C& c, const std::string& v) { c.space.p_hi = parse_real("space.p_hi", v); });
    add("space", "shared_cell", [](const C& c) { return format_bool(c.space.shared_cell); },
        [](C& c, const std::string& v) { c.space.shared_cell = parse_bool("space.shared_cell", v); });

    add("mutation", "period", [](const C& c) { return std::to_string(c.mutation.period); },
        [](C& c, const std::string& v) { c.mutation.period = parse_integer<int>("mutation.period", v); });
    add("mutation", "window", [](const C& c) { return std::to_string(c.mutation.window); },
        [](C& c, const std::string& v) { c.mutation.window = parse_integer<int>("mutation.window", v); });
    add("mutation", "literal_eq8", [](const C& c) { return format_bool(c.mutation.literal_eq8); },
        [](C& c, const std::string& v) { c.mutation.literal_eq8 = parse_bool("mutation.literal_eq8", v); });
    add("mutation", "period_enabled", [](const C& c) { return format_bool(c.mutation.period_enabled); },
        [](C& c, const std::string& v) { c.mutation.period_enabled = parse_bool("mutation.period_enabled", v); });
    add("mutation", "node_add_remove_prob",
        [](const C& c) { return format_double(c.mutation.node_add_remove_prob); },
        [](C& c, const std::string& v) {
          c.mutation.node_add_remove_prob = parse_real("mutation.node_add_remove_prob", v);
        });

    add("crossover", "inter_swap_prob", [](const C& c) { return format_double(c.crossover.inter_swap_prob); },
        [](C& c, const std::string& v) { c.crossover.inter_swap_prob = parse_real("crossover.inter_swap_prob", v); });
    add("crossover", "intra_prob", [](const C& c) { return format_double(c.crossover.intra_prob); },
        [](C& c, const std::string& v) { c.crossover.intra_prob = parse_real("crossover.intra_prob", v); });

    optional_int("macro", "num_cells", &C::num_cells);
    optional_int("macro", "channels", &C::channels);
    optional_int("macro", "input_height", &C::input_height);
    optional_int("macro", "input_width", &C::input_width);
    optional_int("macro", "input_channels", &C::input_channels);
    optional_int("macro", "num_classes", &C::num_classes);
    add("macro", "reduction_positions",
        [](const C& c) { return c.reduction_positions ? format_int_list(*c.reduction_positions) : "auto"; },
        [](C& c, const std::string& v) {
          if (trim(v) == "auto") {
            c.reduction_positions.reset();
            return;
          }
          std::vector<int> out;
          for (const auto& item : split_list(v)) out.push_back(parse_integer<int>("macro.reduction_positions", item));
          c.reduction_positions = out;
        });

    text("data", "source", &C::data_source);
    integer("data", "samples", &C::data_samples);
    real("data", "noise", &C::data_noise);
    add("data", "seed", [](const C& c) { return std::to_string(c.data_seed); },
        [](C& c, const std::string& v) { c.data_seed = parse_integer<std::uint64_t>("data.seed", v); });
    text("data", "idx_images", &C::idx_images);
    text("data", "idx_labels", &C::idx_labels);
    add("data", "limit", [](const C& c) { return std::to_string(c.idx_limit); },
        [](C& c, const std::string& v) { c.idx_limit = parse_integer<std::size_t>("data.limit", v); });

    add("trainer", "batch_size", [](const C& c) { return std::to_string(c.trainer.batch_size); },
        [](C& c, const std::string& v) { c.trainer.batch_size = parse_integer<int>("trainer.batch_size", v); });
    add("trainer", "weight_decay", [](const C& c) { return format_double(c.trainer.weight_decay); },
        [](C& c, const std::string& v) { c.trainer.weight_decay = parse_real("trainer.weight_decay", v); });

    flag("metalr", "enabled", &C::metalr_enabled);
    add("metalr", "mode", [](const C& c) { return std::string(c.metalr_mode == LrMode::live ? "live" : "replay"); },
        [](C& c, const std::string& v) {
          const auto t = trim(v);
          if (t == "replay")
            c.metalr_mode = LrMode::replay;
          else if (t == "live")
            c.metalr_mode = LrMode::live;
          else
            fail(ErrorKind::invalid_config, "metalr.mode must be replay or live");
        });
    real("metalr", "fixed_alpha", &C::fixed_alpha);
    integer("metalr", "hidden", &C::metalr_hidden);
    real("metalr", "alpha_max", &C::alpha_max);
    real("metalr", "initial_alpha", &C::initial_alpha);
    text("metalr", "params", &C::metalr_params_path);
    text("metalr", "schedule", &C::metalr_schedule_path);

    add("es", "population", [](const C& c) { return std::to_string(c.es.population); },
        [](C& c, const std::string& v) { c.es.population = parse_integer<int>("es.population", v); });
    add("es", "sigma", [](const C& c) { return format_double(c.es.sigma); },
        [](C& c, const std::string& v) { c.es.sigma = parse_real("es.sigma", v); });
    add("es", "meta_steps", [](const C& c) { return std::to_string(c.es.meta_steps); },
        [](C& c, const std::string& v) { c.es.meta_steps = parse_integer<int>("es.meta_steps", v); });
    add("es", "inner_steps", [](const C& c) { return std::to_string(c.es.inner_steps); },
        [](C& c, const std::string& v) { c.es.inner_steps = parse_integer<std::uint64_t>("es.inner_steps", v); });
    add("es", "learning_rate", [](const C& c) { return format_double(c.es.learning_rate); },
        [](C& c, const std::string& v) { c.es.learning_rate = parse_real("es.learning_rate", v); });
    add("es", "weight_decay", [](const C& c) { return format_double(c.es.weight_decay); },
        [](C& c, const std::string& v) { c.es.weight_decay = parse_real("es.weight_decay", v); });

    add("task", "kind", [](const C& c) { return c.task.kind; },
        [](C& c, const std::string& v) { c.task.kind = trim(v); });
    add("task", "dim", [](const C& c) { return std::to_string(c.task.bowl_dim); },
        [](C& c, const std::string& v) { c.task.bowl_dim = parse_integer<int>("task.dim", v); });
    add("task", "min_eig", [](const C& c) { return format_double(c.task.bowl_min_eig); },
        [](C& c, const std::string& v) { c.task.bowl_min_eig = parse_real("task.min_eig", v); });
    add("task", "max_eig", [](const C& c) { return format_double(c.task.bowl_max_eig); },
        [](C& c, const std::string& v) { c.task.bowl_max_eig = parse_real("task.max_eig", v); });

    flag("surrogate", "enabled", &C::surrogate_enabled);
    real("surrogate", "lambda", &C::rbf_lambda);
    real("surrogate", "param_scale", &C::param_scale);
    return f;
  }();
  return fields;
}

inline const ConfigField* find_field(const std::string& section, const std::string& key) {
  for (const auto& f : config_fields())
    if (f.section == section && f.key == key) return &f;
  return nullptr;
}

}  // namespace detail

/// Applies one `section.key=value` assignment; unknown keys are fatal.
inline void apply_override(SearchConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  const auto dot = assignment.find('.');
  if (eq == std::string::npos || dot == std::string::npos || dot > eq)
    fail(ErrorKind::invalid_config, "override '" + assignment + "' is not of the form section.key=value");
  const std::string section = detail::trim(assignment.substr(0, dot));
  const std::string key = detail::trim(assignment.substr(dot + 1, eq - dot - 1));
  const auto* field = detail::find_field(section, key);
  if (!field) fail(ErrorKind::invalid_config, "unknown key '" + section + "." + key + "'");
  field->set(cfg, assignment.substr(eq + 1));
  cfg.explicit_keys.insert(field->name());
}

/// Parses INI text (sections of key = value; ';' or '#' comments). Unknown
/// sections or keys, keys outside a section, and duplicates are fatal.
inline SearchConfig parse_config(const std::string& text, SearchConfig base = {}) {
  boost::property_tree::ptree tree;
  try {
    std::istringstream in(text);
    boost::property_tree::ini_parser::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    fail(ErrorKind::invalid_config, std::string("config syntax: ") + e.what());
  }
  for (const auto& [section, body] : tree) {
    if (body.empty())
      fail(ErrorKind::invalid_config, "key '" + section + "' is outside any section");
    for (const auto& [key, value] : body) {
      const auto* field = detail::find_field(section, key);
      if (!field) fail(ErrorKind::invalid_config, "unknown key '" + section + "." + key + "'");
      field->set(base, value.get_value<std::string>());
      base.explicit_keys.insert(field->name());
    }
  }
  return base;
}

inline SearchConfig load_config(const std::filesystem::path& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const Error& e) {
    fail(ErrorKind::invalid_config, e.what());
  }
  return parse_config(text);
}

/// Every result-affecting key with its current value, in schema order;
/// parse_config of the result reproduces the configuration up to `workers`.
inline std::string canonical_config(const SearchConfig& cfg) {
  std::string out, section;
  for (const auto& f : detail::config_fields()) {
    if (!f.hashed) continue;
    if (f.section != section) {
      out += (section.empty() ? "[" : "\n[") + f.section + "]\n";
      section = f.section;
    }
    out += f.key + " = " + f.get(cfg) + "\n";
  }
  return out;
}

/// FNV-1a over the hashed keys of the canonical form, as 16 hex digits.
inline std::string config_hash(const SearchConfig& cfg) {
  std::string payload;
  for (const auto& f : detail::config_fields())
    if (f.hashed) payload += f.name() + "=" + f.get(cfg) + "\n";
  const std::uint64_t h = hash_tag(payload);
  static constexpr char digits[] = "0123456789abcdef";
  std::string hex(16, '0');
  for (int i = 0; i < 16; ++i) hex[static_cast<std::size_t>(15 - i)] = digits[(h >> (4 * i)) & 0xf];
  return hex;
}

}  // namespace metanas
