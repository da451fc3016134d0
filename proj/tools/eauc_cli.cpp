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

// eauc command-line tool.
//
// Settings are resolved in this order, later wins: built-in defaults,
// --config file, EAUC_OUTPUT_DIR (output_dir only), --<key> flags.
// Exit status: 0 success, 1 user error, 2 internal error.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "eauc/eauc.hpp"

namespace fs = std::filesystem;
using namespace eauc;

namespace {

struct CommonOptions {
  std::string config_file;
  std::map<std::string, std::string> overrides;
  bool quiet = false;
};

void add_common(CLI::App* cmd, CommonOptions& opts) {
  cmd->add_option("--config", opts.config_file, "INI configuration file")->check(CLI::ExistingFile);
  cmd->add_flag("--quiet", opts.quiet, "suppress per-epoch progress on stderr");
  for (const ConfigKey& k : config_keys()) {
    const std::string name = k.name;
    cmd->add_option_function<std::string>(
           "--" + name, [&opts, name](const std::string& v) { opts.overrides[name] = v; },
           std::string(k.help) + " [" + k.section + "]")
        ->type_name("VALUE")
        ->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  }
}

ExperimentConfig resolve(const CommonOptions& opts) {
  ExperimentConfig cfg;
  if (!opts.config_file.empty()) cfg = load_config(opts.config_file);
  if (const char* env = std::getenv("EAUC_OUTPUT_DIR"); env && *env) cfg.output_dir = env;
  for (const auto& [k, v] : opts.overrides) set_config_value(cfg, k, v);
  cfg.validate();
  return cfg;
}

Progress progress_for(const CommonOptions& opts) { return Progress{opts.quiet ? nullptr : &std::cerr}; }

fs::path out_dir(const ExperimentConfig& cfg) {
  fs::create_directories(cfg.output_dir);
  return cfg.output_dir;
}

std::string member_file(const fs::path& dir, std::size_t k, const char* kind) {
  return (dir / ("member" + std::to_string(k) + "_" + kind + ".json")).string();
}

std::string log_file(std::size_t k, const char* kind) { return kind + std::string("_member") + std::to_string(k) + ".csv"; }

void save_log(const fs::path& dir, std::size_t k, const TrainingLog& log) {
  std::ostringstream a, b;
  write_training_log(a, log);
  write_timing(b, log);
  write_text_file(dir / log_file(k, "training_log"), a.str());
  write_text_file(dir / log_file(k, "timing"), b.str());
}

int cmd_generate(const ExperimentConfig& cfg) {
  if (cfg.task != "trajectory") throw ConfigError("generate-data only applies to the trajectory task");
  const fs::path dir = out_dir(cfg) / "data";
  fs::create_directories(dir);
  const char* names[3] = {"train.csv", "val.csv", "eval.csv"};
  for (int part = 0; part < 3; ++part) {
    const auto scenes = generate_scenes(cfg.synth(part));
    save_scenes((dir / names[part]).string(), scenes);
    std::cout << (dir / names[part]).string() << ": " << scenes.size() << " scenes\n";
  }
  return 0;
}

int cmd_train(const ExperimentConfig& cfg, Progress progress) {
  const fs::path dir = out_dir(cfg);
  write_text_file(dir / "config_used.ini", dump_config(cfg));
  if (cfg.task == "trajectory") {
    const TrajectoryData data = load_trajectory_data(cfg, false);
    for (std::size_t k = 0; k < cfg.ensemble_size; ++k) {
      progress("member ", k, " of ", cfg.ensemble_size);
      const TrajTrainResult r = train_trajectory(cfg, data.train, data.val, member_seed(cfg.seed, k), progress);
      save_checkpoint(member_file(dir, k, "final"), r.final_params,
                      {{"epoch", static_cast<double>(cfg.epochs)}, {"val_nll", r.log.entries.back().val_nll}});
      save_checkpoint(member_file(dir, k, "best"), r.best_params,
                      {{"epoch", static_cast<double>(r.best_epoch)}, {"val_nll", r.best_val_nll}});
      save_log(dir, k, r.log);
      std::cout << "member " << k << ": final val_nll " << r.log.entries.back().val_nll << ", best epoch "
                << r.best_epoch << '\n';
    }
  } else {
    if (cfg.ensemble_size != 1) throw ConfigError("the regression task trains a single model (ensemble_size = 1)");
    const RegressionTable table = load_regression_data(cfg);
    const RegressionTrainResult r = train_regression(cfg, table, cfg.seed, progress);
    const CheckpointMeta meta{{"var_lo", r.calibration.variance_lo},
                              {"var_hi", r.calibration.variance_hi},
                              {"eauc_first_epoch", static_cast<double>(r.eauc_first_epoch)}};
    CheckpointMeta final_meta = meta, best_meta = meta;
    final_meta["epoch"] = static_cast<double>(cfg.epochs);
    best_meta["epoch"] = static_cast<double>(r.best_epoch);
    save_checkpoint(member_file(dir, 0, "final"), r.final_params, final_meta);
    save_checkpoint(member_file(dir, 0, "best"), r.best_params, best_meta);
    save_log(dir, 0, r.log);
    std::cout << "final val_nll " << r.log.entries.back().val_nll << ", val_rmse " << r.log.entries.back().val_rmse
              << '\n';
  }
  return 0;
}

int cmd_scan(const ExperimentConfig& cfg, Progress progress) {
  const fs::path dir = out_dir(cfg);
  const ScanResult s = warmup_threshold_scan(cfg, progress);
  const std::string body = scan_json(s, cfg).dump(2) + "\n";
  write_text_file(dir / "scan.json", body);
  std::cout << body;
  return 0;
}

int cmd_grid(const ExperimentConfig& cfg, Progress progress) {
  const fs::path dir = out_dir(cfg);
  const std::string body = grid_csv(grid_search(cfg, progress), cfg.task);
  write_text_file(dir / "grid.csv", body);
  std::cout << body;
  return 0;
}

void emit_report(const fs::path& dir, const EvaluationReport& rep, nlohmann::json j) {
  write_text_file(dir / "report.json", j.dump(2) + "\n");
  write_curves(dir, rep);
  std::cout << j.dump(2) << '\n';
}

int cmd_evaluate(const ExperimentConfig& cfg) {
  const fs::path dir = out_dir(cfg);
  std::vector<std::string> paths = parse_path_list(cfg.checkpoints);
  if (paths.empty())
    for (std::size_t k = 0; k < cfg.ensemble_size; ++k) paths.push_back(member_file(dir, k, "final"));

  std::vector<EvaluationRecord> records;
  nlohmann::json extra;
  if (cfg.task == "trajectory") {
    std::vector<TrajModelParams> members;
    for (const auto& p : paths) members.push_back(load_traj_checkpoint(p));
    const auto scenes = scenes_from(cfg.eval_file, cfg, 2);
    records = evaluate_trajectory(members, scenes, cfg);
  } else {
    if (paths.size() != 1) throw ConfigError("the regression task evaluates exactly one checkpoint");
    const BnnParams params = load_bnn_checkpoint(paths[0]);
    const RegressionTable table = load_regression_data(cfg);
    if (table.features.cols() != params.config.input_dim)
      throw ConfigError("checkpoint expects " + std::to_string(params.config.input_dim) + " features, table has " +
                        std::to_string(table.features.cols()));
    const RegressionSplit test = regression_split(table, Split::test);
    const auto preds = predict_split(params, test, cfg);
    const RegressionMetrics m = regression_metrics(preds, test.y);
    extra = {{"test_nll", m.nll}, {"test_rmse", m.rmse}};
    records = regression_records(preds, test.y, cfg.accuracy_threshold);
  }
  std::ostringstream rec;
  write_records(rec, records);
  write_text_file(dir / "records.csv", rec.str());
  const EvaluationReport rep = evaluation_report(records, cfg.accuracy_threshold, cfg.retention_grid);
  nlohmann::json j = report_json(rep, cfg);
  j["checkpoints"] = paths.size();
  for (auto& [k, v] : extra.items()) j[k] = v;
  emit_report(dir, rep, std::move(j));
  return 0;
}

int cmd_retention(const ExperimentConfig& cfg, bool svg) {
  const fs::path dir = out_dir(cfg);
  const std::string path = cfg.records_file.empty() ? (dir / "records.csv").string() : cfg.records_file;
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open records file '" + path + "'");
  const auto records = read_records(is, path);
  const EvaluationReport rep = evaluation_report(records, cfg.accuracy_threshold, cfg.retention_grid);
  const fs::path rdir = dir / "retention";
  nlohmann::json j = report_json(rep, cfg);
  j.erase("task");
  write_text_file(rdir / "report.json", j.dump(2) + "\n");
  for (const auto& csv : write_curves(rdir, rep)) {
    if (svg) write_text_file(fs::path(csv).replace_extension(".svg"), curve_svg(csv));
  }
  std::cout << j.dump(2) << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Error-aligned uncertainty calibration: training and evaluation"};
  app.require_subcommand(1);
  CommonOptions opts;
  bool svg = false;

  auto* gen = app.add_subcommand("generate-data", "write synthetic train/val/eval scene files");
  auto* train = app.add_subcommand("train", "train a model (or an ensemble)");
  auto* scan = app.add_subcommand("warmup-scan", "train without the calibration loss and suggest thresholds");
  auto* grid = app.add_subcommand("grid-search", "rank threshold settings by validation R-AUC");
  auto* eval = app.add_subcommand("evaluate", "evaluate checkpoints and write report, records and curves");
  auto* ret = app.add_subcommand("retention-report", "recompute retention curves from a records file");
  for (auto* c : {gen, train, scan, grid, eval, ret}) add_common(c, opts);
  ret->add_flag("--svg", svg, "also render each curve as SVG");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    const ExperimentConfig cfg = resolve(opts);
    const Progress progress = progress_for(opts);
    if (*gen) return cmd_generate(cfg);
    if (*train) return cmd_train(cfg, progress);
    if (*scan) return cmd_scan(cfg, progress);
    if (*grid) return cmd_grid(cfg, progress);
    if (*eval) return cmd_evaluate(cfg);
    if (*ret) return cmd_retention(cfg, svg);
  } catch (const UserError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return 2;
  }
  return 2;
}
