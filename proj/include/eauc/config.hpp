// Copyright 2026 The EaUC Authors
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

// Experiment configuration.
//
// Files are INI text: "[section]" headers, "key = value" lines, ';' starts a
// comment line. Every key is unique across sections, so each one doubles as
// a "--key value" command-line flag. Unknown sections or keys are errors.
// config_keys() is the single source of truth for names, sections,
// defaults and help text.

#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "eauc/datasets.hpp"
#include "eauc/eau_loss.hpp"
#include "eauc/error.hpp"

namespace eauc {

struct ExperimentConfig {
  // [experiment]
  std::string task = "trajectory";
  std::uint64_t seed = 1;
  std::string output_dir = "eauc_out";

  // [data]
  std::string train_file;
  std::string val_file;
  std::string eval_file;
  std::string table_file;
  std::string target_column = "MEDV";
  double train_ratio = 0.8;
  double val_ratio = 0.1;
  std::uint64_t split_seed = 0;

  // [synth]
  std::uint64_t scenes = 2000;
  std::uint64_t val_scenes = 200;
  std::uint64_t eval_scenes = 400;
  std::uint64_t shifted_scenes = 400;
  std::uint64_t context_steps = 5;
  std::uint64_t horizon_steps = 25;
  double timestep = 0.2;
  double p_cv = 0.5;
  double p_turn = 0.35;
  double p_stop = 0.15;
  double noise_scale = 0.3;
  double shift_p_cv = 0.35;
  double shift_p_turn = 0.35;
  double shift_p_stop = 0.30;
  double shift_noise_multiplier = 3.0;
  std::uint64_t data_seed = 1;

  // [model]
  std::uint64_t hidden = 64;
  std::uint64_t bnn_hidden = 100;
  double dropout = 0.5;
  std::uint64_t mc_samples = 20;
  std::uint64_t train_mc_samples = 20;
  std::uint64_t ensemble_size = 1;

  // [optim]
  double lr = 1e-4;
  double sgd_lr = 1e-3;
  double weight_decay = 0.01;
  double momentum = 0.9;
  std::uint64_t epochs = 100;
  std::uint64_t batch_size = 128;
  std::uint64_t warmup_epochs = 1;
  double grad_clip = 1.0;

  // [eauc]
  double beta = 200.0;
  double gamma = 3.0;
  double ade_th = 0.8;
  double c_th = 0.6;
  double epsilon = 1e-8;
  double ade_scale = 0.5;
  double c_clip_lo = 0.0;
  double c_clip_hi = 100.0;
  std::uint64_t eauc_start_epoch = 1;
  double var_lo = std::numeric_limits<double>::quiet_NaN();
  double var_hi = std::numeric_limits<double>::quiet_NaN();
  double var_percentile_lo = 5.0;
  double var_percentile_hi = 95.0;

  // [eval]
  std::uint64_t plans_sampled = 10;
  std::uint64_t plans_kept = 5;
  double accuracy_threshold = 1.6;
  std::uint64_t retention_grid = 101;
  std::string checkpoints;
  std::string records_file;

  // [scan]
  std::string scan_percentiles = "0,5,25,50,75,95,100";
  double suggest_ade_percentile = 50.0;
  double suggest_c_percentile = 50.0;

  // [grid]
  std::string grid_ade_th = "0.8";
  std::string grid_c_th = "0.6";
  std::string grid_beta = "200";
  std::uint64_t grid_epochs = 5;

  EaucConfig eauc() const {
    EaucConfig c;
    c.ade_th = ade_th;
    c.c_th = c_th;
    c.beta = beta;
    c.gamma = gamma;
    c.epsilon = epsilon;
    c.ade_scale = ade_scale;
    c.c_clip_lo = c_clip_lo;
    c.c_clip_hi = c_clip_hi;
    return c;
  }

  /// Synthetic generator settings for one partition. Partitions draw from
  /// independent seed streams: 0 train, 1 validation, 2 evaluation.
  SynthConfig synth(int partition) const {
    SynthConfig s;
    s.context_steps = context_steps;
    s.horizon_steps = horizon_steps;
    s.timestep = timestep;
    s.mix = {p_cv, p_turn, p_stop};
    s.noise_scale = noise_scale;
    s.shift_mix = {shift_p_cv, shift_p_turn, shift_p_stop};
    s.shift_noise_multiplier = shift_noise_multiplier;
    s.seed = mix_seed(data_seed, 0xda7a, static_cast<std::uint64_t>(partition));
    switch (partition) {
      case 0: s.scenes = scenes; s.shifted_scenes = 0; break;
      case 1: s.scenes = val_scenes; s.shifted_scenes = 0; break;
      default: s.scenes = eval_scenes; s.shifted_scenes = shifted_scenes; break;
    }
    return s;
  }

  void validate() const;
};

/// Description of one configuration key.
struct ConfigKey {
  using Field = std::variant<std::string ExperimentConfig::*, std::uint64_t ExperimentConfig::*,
                             double ExperimentConfig::*>;
  const char* section;
  const char* name;
  Field field;
  const char* help;
};

inline const std::vector<ConfigKey>& config_keys() {
  using E = ExperimentConfig;
  static const std::vector<ConfigKey> keys = {
      {"experiment", "task", &E::task, "trajectory or regression"},
      {"experiment", "seed", &E::seed, "model initialization and batch-order seed"},
      {"experiment", "output_dir", &E::output_dir, "directory for all outputs (env EAUC_OUTPUT_DIR overrides)"},

      {"data", "train_file", &E::train_file, "training scenes file; empty generates from [synth]"},
      {"data", "val_file", &E::val_file, "validation scenes file; empty generates from [synth]"},
      {"data", "eval_file", &E::eval_file, "evaluation scenes file; empty generates from [synth]"},
      {"data", "table_file", &E::table_file, "regression CSV table (regression task)"},
      {"data", "target_column", &E::target_column, "regression target column name"},
      {"data", "train_ratio", &E::train_ratio, "regression train fraction"},
      {"data", "val_ratio", &E::val_ratio, "regression validation fraction; the rest is test"},
      {"data", "split_seed", &E::split_seed, "regression split shuffle seed"},

      {"synth", "scenes", &E::scenes, "training scenes"},
      {"synth", "val_scenes", &E::val_scenes, "validation scenes"},
      {"synth", "eval_scenes", &E::eval_scenes, "in-distribution evaluation scenes"},
      {"synth", "shifted_scenes", &E::shifted_scenes, "shifted evaluation scenes"},
      {"synth", "context_steps", &E::context_steps, "past steps in the context"},
      {"synth", "horizon_steps", &E::horizon_steps, "future steps to predict"},
      {"synth", "timestep", &E::timestep, "seconds per step"},
      {"synth", "p_cv", &E::p_cv, "constant-velocity probability"},
      {"synth", "p_turn", &E::p_turn, "constant-turn probability"},
      {"synth", "p_stop", &E::p_stop, "braking probability"},
      {"synth", "noise_scale", &E::noise_scale, "positional noise (m)"},
      {"synth", "shift_p_cv", &E::shift_p_cv, "shifted constant-velocity probability"},
      {"synth", "shift_p_turn", &E::shift_p_turn, "shifted constant-turn probability"},
      {"synth", "shift_p_stop", &E::shift_p_stop, "shifted braking probability"},
      {"synth", "shift_noise_multiplier", &E::shift_noise_multiplier, "noise multiplier for shifted scenes"},
      {"synth", "data_seed", &E::data_seed, "scene generator seed"},

      {"model", "hidden", &E::hidden, "trajectory model hidden width"},
      {"model", "bnn_hidden", &E::bnn_hidden, "regression network hidden width"},
      {"model", "dropout", &E::dropout, "regression dropout probability"},
      {"model", "mc_samples", &E::mc_samples, "MC-dropout passes at prediction time"},
      {"model", "train_mc_samples", &E::train_mc_samples, "MC-dropout passes per training batch"},
      {"model", "ensemble_size", &E::ensemble_size, "independently seeded trajectory models"},

      {"optim", "lr", &E::lr, "AdamW peak learning rate (trajectory)"},
      {"optim", "sgd_lr", &E::sgd_lr, "SGD peak learning rate (regression)"},
      {"optim", "weight_decay", &E::weight_decay, "decoupled (AdamW) or L2 (SGD) weight decay"},
      {"optim", "momentum", &E::momentum, "SGD momentum"},
      {"optim", "epochs", &E::epochs, "training epochs"},
      {"optim", "batch_size", &E::batch_size, "minibatch size"},
      {"optim", "warmup_epochs", &E::warmup_epochs, "linear learning-rate warmup epochs"},
      {"optim", "grad_clip", &E::grad_clip, "global gradient-norm bound; 0 disables"},

      {"eauc", "beta", &E::beta, "EaUC loss weight; 0 trains the baseline"},
      {"eauc", "gamma", &E::gamma, "weight on the accurate-and-certain mass"},
      {"eauc", "ade_th", &E::ade_th, "scaled error threshold"},
      {"eauc", "c_th", &E::c_th, "normalized certainty threshold"},
      {"eauc", "epsilon", &E::epsilon, "log guard"},
      {"eauc", "ade_scale", &E::ade_scale, "multiplier from raw error to scaled error"},
      {"eauc", "c_clip_lo", &E::c_clip_lo, "log-likelihood clip lower bound"},
      {"eauc", "c_clip_hi", &E::c_clip_hi, "log-likelihood clip upper bound"},
      {"eauc", "eauc_start_epoch", &E::eauc_start_epoch, "first epoch (1-based) with the EaUC term"},
      {"eauc", "var_lo", &E::var_lo, "regression variance lower bound; nan derives it from warmup"},
      {"eauc", "var_hi", &E::var_hi, "regression variance upper bound; nan derives it from warmup"},
      {"eauc", "var_percentile_lo", &E::var_percentile_lo, "percentile for derived var_lo"},
      {"eauc", "var_percentile_hi", &E::var_percentile_hi, "percentile for derived var_hi"},

      {"eval", "plans_sampled", &E::plans_sampled, "sampled plans per scene and model (G)"},
      {"eval", "plans_kept", &E::plans_kept, "top plans kept (D)"},
      {"eval", "accuracy_threshold", &E::accuracy_threshold, "raw error threshold for an accurate prediction"},
      {"eval", "retention_grid", &E::retention_grid, "retention fractions including 0 and 1"},
      {"eval", "checkpoints", &E::checkpoints, "comma-separated checkpoints; empty uses output_dir"},
      {"eval", "records_file", &E::records_file, "records file for retention-report; empty uses output_dir"},

      {"scan", "scan_percentiles", &E::scan_percentiles, "comma-separated percentiles to report"},
      {"scan", "suggest_ade_percentile", &E::suggest_ade_percentile, "percentile suggested for ade_th"},
      {"scan", "suggest_c_percentile", &E::suggest_c_percentile, "percentile suggested for c_th"},

      {"grid", "grid_ade_th", &E::grid_ade_th, "comma-separated ade_th values"},
      {"grid", "grid_c_th", &E::grid_c_th, "comma-separated c_th values"},
      {"grid", "grid_beta", &E::grid_beta, "comma-separated beta values"},
      {"grid", "grid_epochs", &E::grid_epochs, "epochs per grid cell"},
  };
  return keys;
}

inline const ConfigKey* find_config_key(std::string_view name) {
  for (const ConfigKey& k : config_keys())
    if (name == k.name) return &k;
  return nullptr;
}

/// Sets one key from its text form. Throws ConfigError on unknown keys or
/// malformed values.
inline void set_config_value(ExperimentConfig& cfg, std::string_view name, std::string_view value) {
  const ConfigKey* key = find_config_key(name);
  if (!key) throw ConfigError("unknown configuration key '" + std::string(name) + "'");
  const std::string v(text::trim(value));
  std::visit(
      [&](auto member) {
        using T = std::remove_reference_t<decltype(cfg.*member)>;
        if constexpr (std::is_same_v<T, std::string>) {
          cfg.*member = v;
        } else if constexpr (std::is_same_v<T, std::uint64_t>) {
          if (!text::parse_u64(v, cfg.*member))
            throw ConfigError("key '" + std::string(name) + "': expected a non-negative integer, got '" + v + "'");
        } else {
          // nan is accepted so auto-derived bounds can be spelled out.
          if (v == "nan") {
            cfg.*member = std::numeric_limits<double>::quiet_NaN();
          } else if (!text::parse_double(v, cfg.*member)) {
            throw ConfigError("key '" + std::string(name) + "': expected a number, got '" + v + "'");
          }
        }
      },
      key->field);
}

inline std::string get_config_value(const ExperimentConfig& cfg, const ConfigKey& key) {
  return std::visit(
      [&](auto member) -> std::string {
        using T = std::remove_cvref_t<decltype(cfg.*member)>;
        if constexpr (std::is_same_v<T, std::string>) {
          return cfg.*member;
        } else if constexpr (std::is_same_v<T, std::uint64_t>) {
          return std::to_string(cfg.*member);
        } else {
          return std::isnan(cfg.*member) ? "nan" : text::format_double(cfg.*member);
        }
      },
      key.field);
}

/// Applies every key of an INI document onto cfg.
inline void apply_ini(ExperimentConfig& cfg, std::istream& is, const std::string& source) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  try {
    pt::read_ini(is, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ParseError(source, e.line(), e.message());
  }
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty()) throw ConfigError(source + ": key '" + section + "' must appear inside a [section]");
    for (const auto& [name, node] : body) {
      const ConfigKey* key = find_config_key(name);
      if (!key) throw ConfigError(source + ": unknown key '" + name + "' in [" + section + "]");
      if (section != key->section) {
        throw ConfigError(source + ": key '" + name + "' belongs in [" + key->section + "], found in [" + section +
                          "]");
      }
      set_config_value(cfg, name, node.data());
    }
  }
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config '" + path + "'");
  ExperimentConfig cfg;
  apply_ini(cfg, is, path);
  return cfg;
}

/// The full configuration as an INI document, sections in declaration order.
inline std::string dump_config(const ExperimentConfig& cfg) {
  std::ostringstream os;
  const char* current = nullptr;
  for (const ConfigKey& k : config_keys()) {
    if (!current || std::string_view(current) != k.section) {
      if (current) os << '\n';
      os << '[' << k.section << "]\n";
      current = k.section;
    }
    os << k.name << " = " << get_config_value(cfg, k) << '\n';
  }
  return os.str();
}

inline std::vector<double> parse_double_list(std::string_view s, std::string_view what) {
  std::vector<double> out;
  for (std::string_view part : text::split(s, ',')) {
    part = text::trim(part);
    if (part.empty()) continue;
    double v;
    if (!text::parse_double(part, v))
      throw ConfigError(std::string(what) + ": '" + std::string(part) + "' is not a number");
    out.push_back(v);
  }
  if (out.empty()) throw ConfigError(std::string(what) + ": list is empty");
  return out;
}

inline std::vector<std::string> parse_path_list(std::string_view s) {
  std::vector<std::string> out;
  for (std::string_view part : text::split(s, ',')) {
    part = text::trim(part);
    if (!part.empty()) out.emplace_back(part);
  }
  return out;
}

inline void ExperimentConfig::validate() const {
  if (task != "trajectory" && task != "regression")
    throw ConfigError("task must be 'trajectory' or 'regression', got '" + task + "'");
  if (output_dir.empty()) throw ConfigError("output_dir must not be empty");
  eauc().validate();
  if (epochs == 0) throw ConfigError("epochs must be at least 1");
  if (batch_size == 0) throw ConfigError("batch_size must be at least 1");
  if (!(lr > 0.0) || !(sgd_lr > 0.0)) throw ConfigError("learning rates must be > 0");
  if (weight_decay < 0.0 || momentum < 0.0 || momentum >= 1.0)
    throw ConfigError("weight_decay must be >= 0 and momentum in [0, 1)");
  if (grad_clip < 0.0) throw ConfigError("grad_clip must be >= 0");
  if (eauc_start_epoch == 0) throw ConfigError("eauc_start_epoch is 1-based");
  if (plans_kept == 0 || plans_kept > plans_sampled * std::max<std::uint64_t>(ensemble_size, 1))
    throw ConfigError("plans_kept must be in [1, plans_sampled * ensemble_size]");
  if (ensemble_size == 0) throw ConfigError("ensemble_size must be at least 1");
  if (retention_grid < 2) throw ConfigError("retention_grid must be at least 2");
  if (!(accuracy_threshold >= 0.0)) throw ConfigError("accuracy_threshold must be >= 0");
  if (!(var_percentile_lo >= 0.0 && var_percentile_lo < var_percentile_hi && var_percentile_hi <= 100.0))
    throw ConfigError("variance percentiles must satisfy 0 <= lo < hi <= 100");
  if (std::isnan(var_lo) != std::isnan(var_hi)) throw ConfigError("set both var_lo and var_hi, or neither");
  if (!std::isnan(var_lo) && !(var_lo < var_hi)) throw ConfigError("var_lo must be < var_hi");
  if (mc_samples == 0 || train_mc_samples == 0) throw ConfigError("MC sample counts must be at least 1");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
  if (hidden == 0 || bnn_hidden == 0) throw ConfigError("hidden widths must be positive");
  if (task == "trajectory") {
    synth(0).validate();
    synth(2).validate();
    for (const std::string* f : {&train_file, &val_file, &eval_file})
      if (!f->empty() && !std::filesystem::exists(*f)) throw ConfigError("data file '" + *f + "' does not exist");
  } else {
    if (table_file.empty()) throw ConfigError("regression task needs table_file");
    if (!std::filesystem::exists(table_file)) throw ConfigError("table_file '" + table_file + "' does not exist");
    if (!(train_ratio > 0.0 && val_ratio >= 0.0 && train_ratio + val_ratio < 1.0))
      throw ConfigError("train_ratio and val_ratio must leave a non-empty test split");
  }
  for (const double p : parse_double_list(scan_percentiles, "scan_percentiles"))
    if (p < 0.0 || p > 100.0) throw ConfigError("scan_percentiles must lie in [0, 100]");
}

}  // namespace eauc
