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

// Experiment orchestration: training loops for both tasks, evaluation,
// warmup threshold scans, threshold grid search and the on-disk formats
// shared between CLI commands.
//
// Seed streams. Every random draw comes from a generator seeded by
// mix_seed(seed, tag, index), one stream per purpose:
//   batch order     (seed, 0xba7c, epoch)
//   EaUC noise      (seed, 0xe9a5, epoch)   trajectory sample for the loss
//   dropout masks   (seed, 0xd0, epoch)     regression training
//   plan sampling   (seed, scene_id, member)
// The EaUC graph is always built and logged, and its noise has its own
// stream, so a beta = 0 run follows exactly the same parameter trajectory
// as a run that never computes the EaUC term.

#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "eauc/autodiff.hpp"
#include "eauc/bnn_model.hpp"
#include "eauc/calib_metrics.hpp"
#include "eauc/checkpoint.hpp"
#include "eauc/config.hpp"
#include "eauc/datasets.hpp"
#include "eauc/eau_loss.hpp"
#include "eauc/error.hpp"
#include "eauc/optim.hpp"
#include "eauc/params.hpp"
#include "eauc/traj_model.hpp"

namespace eauc {

// ---------------------------------------------------------------------------
// Small helpers
// ---------------------------------------------------------------------------

/// Linear-interpolation percentile (p in [0, 100]) of unsorted values.
inline double percentile(std::vector<double> values, double p) {
  if (values.empty()) throw DomainError("percentile: no values");
  std::sort(values.begin(), values.end());
  const double pos = std::clamp(p, 0.0, 100.0) / 100.0 * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

inline double median(std::vector<double> v) { return percentile(std::move(v), 50.0); }

inline std::vector<std::size_t> epoch_permutation(std::size_t n, std::uint64_t seed, std::size_t epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(mix_seed(seed, 0xba7c, epoch));
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

inline std::uint64_t member_seed(std::uint64_t seed, std::size_t member) {
  return member == 0 ? seed : mix_seed(seed, 0xe45e, member);
}

struct Progress {
  std::ostream* os = nullptr;
  template <typename... Args>
  void operator()(const Args&... args) const {
    if (!os) return;
    (*os << ... << args) << '\n';
    os->flush();
  }
};

// ---------------------------------------------------------------------------
// Training log
// ---------------------------------------------------------------------------

struct TrainingLogEntry {
  std::size_t epoch = 0;
  double primary = 0.0;
  double eauc = 0.0;
  double total = 0.0;
  double eau_measure = 0.0;
  double val_nll = 0.0;
  double val_rmse = std::numeric_limits<double>::quiet_NaN();  // regression only
  double lr = 0.0;
  bool eauc_active = false;
};

struct TrainingLog {
  std::vector<TrainingLogEntry> entries;
  std::vector<double> epoch_seconds;  // kept apart so logs stay deterministic
};

inline void write_training_log(std::ostream& os, const TrainingLog& log) {
  using text::format_double;
  os << "epoch,primary,eauc,total,eau_measure,val_nll,val_rmse,lr,eauc_active\n";
  for (const auto& e : log.entries) {
    os << e.epoch << ',' << format_double(e.primary) << ',' << format_double(e.eauc) << ','
       << format_double(e.total) << ',' << format_double(e.eau_measure) << ',' << format_double(e.val_nll) << ','
       << (std::isnan(e.val_rmse) ? std::string() : format_double(e.val_rmse)) << ',' << format_double(e.lr) << ','
       << (e.eauc_active ? 1 : 0) << '\n';
  }
}

inline void write_timing(std::ostream& os, const TrainingLog& log) {
  os << "epoch,seconds\n";
  for (std::size_t i = 0; i < log.epoch_seconds.size(); ++i) os << i + 1 << ',' << log.epoch_seconds[i] << '\n';
}

// ---------------------------------------------------------------------------
// Trajectory task
// ---------------------------------------------------------------------------

struct TrajectoryData {
  std::vector<SceneSample> train;
  std::vector<SceneSample> val;
  std::vector<SceneSample> eval;
};

inline std::vector<SceneSample> scenes_from(const std::string& file, const ExperimentConfig& cfg, int partition) {
  return file.empty() ? generate_scenes(cfg.synth(partition)) : load_scenes(file);
}

inline TrajectoryData load_trajectory_data(const ExperimentConfig& cfg, bool need_eval = true) {
  TrajectoryData d;
  d.train = scenes_from(cfg.train_file, cfg, 0);
  d.val = scenes_from(cfg.val_file, cfg, 1);
  if (need_eval) d.eval = scenes_from(cfg.eval_file, cfg, 2);
  return d;
}

/// Model hyperparameters matched to the scene layout.
inline TrajModelConfig traj_model_config(const ExperimentConfig& cfg, const std::vector<SceneSample>& scenes) {
  if (scenes.empty()) throw ConfigError("trajectory task: no training scenes");
  TrajModelConfig m;
  m.context_dim = scenes.front().context.size();
  m.horizon = scenes.front().target.horizon();
  m.timestep = scenes.front().target.timestep;
  m.hidden = cfg.hidden;
  return m;
}

inline void check_scenes_match(const TrajModelConfig& m, const std::vector<SceneSample>& scenes,
                               const std::string& what) {
  for (const SceneSample& s : scenes) {
    if (s.context.size() != m.context_dim || s.target.horizon() != m.horizon) {
      throw ConfigError(what + ": scene " + std::to_string(s.scene_id) + " has context " +
                        std::to_string(s.context.size()) + " / horizon " + std::to_string(s.target.horizon()) +
                        ", model expects " + std::to_string(m.context_dim) + " / " + std::to_string(m.horizon));
    }
  }
}

struct SceneBatch {
  std::vector<const std::vector<double>*> contexts;
  std::vector<const Trajectory*> targets;
};

inline SceneBatch gather(const std::vector<SceneSample>& scenes, std::span<const std::size_t> idx) {
  SceneBatch b;
  for (std::size_t i : idx) {
    b.contexts.push_back(&scenes[i].context);
    b.targets.push_back(&scenes[i].target);
  }
  return b;
}

/// Per-sample loss inputs for one batch: raw ADE (m) and raw log-likelihood
/// of a reparameterized sample from the teacher-forced step distributions.
struct TrajBatchGraph {
  ad::Var primary;  // mean negative teacher-forced log-likelihood
  ad::Var raw_ade;  // B x 1
  ad::Var raw_ll;   // B x 1
};

inline TrajBatchGraph traj_batch_graph(const BoundParams& p, const TrajModelConfig& m, ad::Tape& tape,
                                       const SceneBatch& batch, std::mt19937_64& eps_rng) {
  const std::size_t b = batch.contexts.size();
  const std::vector<Tensor> targets = traj::stack_targets(batch.targets, m.horizon);
  traj::TeacherForcedGraph tf =
      traj::teacher_forced(p, m, tape.constant(traj::stack_contexts(batch.contexts, m.context_dim)), targets);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<Tensor> eps(m.horizon, Tensor({b, 2}));
  for (Tensor& e : eps)
    for (double& v : e.values()) v = normal(eps_rng);
  traj::ReparamSampleGraph rs = traj::reparameterized_sample(tf, targets, eps);
  return {-ad::mean(tf.loglik), rs.ade, rs.loglik};
}

/// Mean negative teacher-forced log-likelihood over a scene set.
inline double trajectory_nll(const TrajModelParams& params, const std::vector<SceneSample>& scenes) {
  constexpr std::size_t kChunk = 256;
  double acc = 0.0;
  for (std::size_t start = 0; start < scenes.size(); start += kChunk) {
    std::vector<std::size_t> idx(std::min(kChunk, scenes.size() - start));
    std::iota(idx.begin(), idx.end(), start);
    const SceneBatch b = gather(scenes, idx);
    for (double ll : score_trajectories(params, b.contexts, b.targets)) acc -= ll;
  }
  return acc / static_cast<double>(scenes.size());
}

struct BatchStats {
  double primary = 0.0, eauc = 0.0, total = 0.0, eau = 0.0;
  std::size_t batches = 0;

  void add(double p, double e, double t, double m) {
    primary += p;
    eauc += e;
    total += t;
    eau += m;
    ++batches;
  }
  TrainingLogEntry entry(std::size_t epoch) const {
    const double n = static_cast<double>(std::max<std::size_t>(batches, 1));
    TrainingLogEntry e;
    e.epoch = epoch;
    e.primary = primary / n;
    e.eauc = eauc / n;
    e.total = total / n;
    e.eau_measure = eau / n;
    return e;
  }
};

inline void check_finite_loss(double v, std::size_t epoch, std::size_t batch, const char* what) {
  if (!std::isfinite(v)) {
    throw DivergenceError(std::string(what) + " became non-finite at epoch " + std::to_string(epoch) + ", batch " +
                          std::to_string(batch));
  }
}

inline void check_finite_values(const Tensor& t, std::size_t epoch, std::size_t batch, const char* what) {
  for (double v : t.values()) check_finite_loss(v, epoch, batch, what);
}

struct ScheduleInfo {
  std::size_t total_steps;
  std::size_t warmup_steps;
};

inline ScheduleInfo schedule_for(const ExperimentConfig& cfg, std::size_t rows) {
  const std::size_t per_epoch = (rows + cfg.batch_size - 1) / cfg.batch_size;
  return {per_epoch * cfg.epochs, per_epoch * cfg.warmup_epochs};
}

template <typename Params>
struct TrainResult {
  Params final_params;
  Params best_params;
  std::size_t best_epoch = 0;
  double best_val_nll = std::numeric_limits<double>::infinity();
  TrainingLog log;
};

using TrajTrainResult = TrainResult<TrajModelParams>;

inline TrajTrainResult train_trajectory(const ExperimentConfig& cfg, const std::vector<SceneSample>& train,
                                        const std::vector<SceneSample>& val, std::uint64_t seed,
                                        Progress progress = {}) {
  const TrajModelConfig m = traj_model_config(cfg, train);
  check_scenes_match(m, train, "training data");
  check_scenes_match(m, val, "validation data");
  if (val.empty()) throw ConfigError("trajectory task: no validation scenes");
  const EaucConfig ecfg = cfg.eauc();
  ecfg.validate();

  TrajTrainResult res{make_traj_params(m, seed), {}, 0, std::numeric_limits<double>::infinity(), {}};
  TrajModelParams& params = res.final_params;
  AdamW opt(cfg.weight_decay);
  const ScheduleInfo sched = schedule_for(cfg, train.size());
  std::size_t step = 0;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const std::vector<std::size_t> order = epoch_permutation(train.size(), seed, epoch);
    std::mt19937_64 eps_rng(mix_seed(seed, 0xe9a5, epoch));
    const bool active = ecfg.beta > 0.0 && epoch >= cfg.eauc_start_epoch;
    BatchStats stats;
    double lr = 0.0;
    for (std::size_t start = 0, batch = 1; start < order.size(); start += cfg.batch_size, ++batch) {
      const std::span<const std::size_t> idx(order.data() + start, std::min<std::size_t>(cfg.batch_size, order.size() - start));
      ad::Tape tape;
      BoundParams p(tape, params.weights);
      const TrajBatchGraph g = traj_batch_graph(p, m, tape, gather(train, idx), eps_rng);
      const double primary = g.primary.item();
      check_finite_loss(primary, epoch, batch, "primary loss");
      check_finite_values(g.raw_ade.value(), epoch, batch, "sample ADE");
      check_finite_values(g.raw_ll.value(), epoch, batch, "sample log-likelihood");
      ad::Var ade = scale_ade(g.raw_ade, ecfg);
      ad::Var cert = postprocess_certainty(g.raw_ll, ecfg);
      ad::Var eauc = eauc_loss(soft_counts(ade, cert, ecfg), ecfg);
      ad::Var root = active ? total_loss(g.primary, eauc, ecfg) : g.primary;

      check_finite_loss(root.item(), epoch, batch, "total loss");
      const CategoryCounts hard = hard_counts(ade.value().storage(), cert.value().storage(), ecfg);
      stats.add(primary, eauc.item(), primary + ecfg.beta * eauc.item(), eau_measure(hard));

      std::vector<Tensor> grads = p.gradients(tape.backward(root));
      check_finite_loss(clip_grad_norm(grads, cfg.grad_clip), epoch, batch, "gradient norm");
      lr = cosine_warmup_lr(cfg.lr, ++step, sched.warmup_steps, sched.total_steps);
      opt.step(params.weights, grads, lr);
    }
    TrainingLogEntry e = stats.entry(epoch);
    e.val_nll = trajectory_nll(params, val);
    e.lr = lr;
    e.eauc_active = active;
    res.log.entries.push_back(e);
    res.log.epoch_seconds.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    if (e.val_nll < res.best_val_nll) {
      res.best_val_nll = e.val_nll;
      res.best_epoch = epoch;
      res.best_params = params;
    }
    progress("epoch ", epoch, "/", cfg.epochs, " primary=", e.primary, " eauc=", e.eauc, " eau=", e.eau_measure,
             " val_nll=", e.val_nll);
  }
  if (res.best_epoch == 0) res.best_params = params;
  return res;
}

/// One record per scene. Each member samples plans_sampled plans per scene;
/// with several members the pooled plans are rescored by the mean member
/// log-likelihood before the top plans_kept are taken.
inline std::vector<EvaluationRecord> evaluate_trajectory(std::span<const TrajModelParams> members,
                                                         const std::vector<SceneSample>& scenes,
                                                         const ExperimentConfig& cfg) {
  if (members.empty()) throw ConfigError("evaluate: at least one checkpoint is required");
  for (std::size_t k = 0; k < members.size(); ++k) {
    check_scenes_match(members[k].config, scenes, "evaluation data vs checkpoint " + std::to_string(k));
    if (members[k].config.horizon != members[0].config.horizon)
      throw ConfigError("evaluate: ensemble members disagree on horizon");
  }
  const std::size_t g = cfg.plans_sampled, d = cfg.plans_kept, kcount = members.size();
  if (d == 0 || d > g * kcount) throw ConfigError("evaluate: plans_kept must be in [1, plans_sampled * members]");
  constexpr std::size_t kChunk = 16;
  std::vector<EvaluationRecord> records;
  records.reserve(scenes.size());
  for (std::size_t start = 0; start < scenes.size(); start += kChunk) {
    std::vector<std::size_t> idx(std::min(kChunk, scenes.size() - start));
    std::iota(idx.begin(), idx.end(), start);
    const SceneBatch batch = gather(scenes, idx);

    // samples[k][i] = member k's plans for scene i
    std::vector<std::vector<std::vector<ScoredTrajectory>>> samples;
    for (std::size_t k = 0; k < kcount; ++k) {
      std::vector<std::uint64_t> seeds;
      for (std::size_t i : idx) seeds.push_back(mix_seed(cfg.seed, scenes[i].scene_id, k));
      samples.push_back(sample_plans_batch(members[k], batch.contexts, g, seeds));
    }

    std::vector<PlanSet> plans(idx.size());
    if (kcount == 1) {
      for (std::size_t i = 0; i < idx.size(); ++i) plans[i] = top_d_plans(samples[0][i], d);
    } else {
      std::vector<std::vector<Trajectory>> pooled(idx.size());
      std::vector<const std::vector<double>*> ctx;
      std::vector<const Trajectory*> trajs;
      for (std::size_t i = 0; i < idx.size(); ++i)
        for (std::size_t k = 0; k < kcount; ++k)
          for (const ScoredTrajectory& s : samples[k][i]) pooled[i].push_back(s.trajectory);
      for (std::size_t i = 0; i < idx.size(); ++i)
        for (const Trajectory& t : pooled[i]) {
          ctx.push_back(batch.contexts[i]);
          trajs.push_back(&t);
        }
      std::vector<std::vector<double>> scores_by_member;
      for (std::size_t k = 0; k < kcount; ++k) scores_by_member.push_back(score_trajectories(members[k], ctx, trajs));
      std::size_t row = 0;
      for (std::size_t i = 0; i < idx.size(); ++i) {
        std::vector<std::vector<double>> member_scores(pooled[i].size(), std::vector<double>(kcount));
        for (std::size_t j = 0; j < pooled[i].size(); ++j, ++row)
          for (std::size_t k = 0; k < kcount; ++k) member_scores[j][k] = scores_by_member[k][row];
        plans[i] = ensemble_aggregate(pooled[i], member_scores, d);
      }
    }
    for (std::size_t i = 0; i < idx.size(); ++i) {
      const SceneSample& s = scenes[idx[i]];
      records.push_back(make_record(s.scene_id, s.shifted, plans[i], s.target, cfg.accuracy_threshold));
    }
  }
  return records;
}

// ---------------------------------------------------------------------------
// Regression task
// ---------------------------------------------------------------------------

inline RegressionTable load_regression_data(const ExperimentConfig& cfg) {
  SplitRatios r{cfg.train_ratio, cfg.val_ratio, 1.0 - cfg.train_ratio - cfg.val_ratio};
  return load_regression_table(cfg.table_file, cfg.target_column, cfg.split_seed, r);
}

struct RegressionSplit {
  Tensor x;
  std::vector<double> y;
};

inline RegressionSplit regression_split(const RegressionTable& t, Split which) {
  const std::vector<std::size_t> idx = t.indices(which);
  RegressionSplit out{Tensor({idx.size(), t.features.cols()}), {}};
  for (std::size_t r = 0; r < idx.size(); ++r) {
    for (std::size_t c = 0; c < t.features.cols(); ++c) out.x(r, c) = t.features(idx[r], c);
    out.y.push_back(t.targets[idx[r]]);
  }
  return out;
}

struct RegressionMetrics {
  std::size_t count = 0;
  double nll = 0.0;
  double rmse = 0.0;
};

inline RegressionMetrics regression_metrics(const std::vector<GaussianPrediction>& preds,
                                            const std::vector<double>& targets) {
  if (preds.empty()) throw DomainError("regression metrics: empty split");
  RegressionMetrics m;
  m.count = preds.size();
  double sq = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    m.nll += gaussian_nll(preds[i], targets[i]);
    sq += (preds[i].mean - targets[i]) * (preds[i].mean - targets[i]);
  }
  m.nll /= static_cast<double>(preds.size());
  m.rmse = std::sqrt(sq / static_cast<double>(preds.size()));
  return m;
}

/// Fixed prediction seed so validation and test numbers do not depend on
/// when they are computed.
inline constexpr std::uint64_t kPredictSeed = 0x9ed1c7;

inline std::vector<GaussianPrediction> predict_split(const BnnParams& p, const RegressionSplit& s,
                                                     const ExperimentConfig& cfg) {
  return mc_predict_batch(p, s.x, cfg.mc_samples, kPredictSeed);
}

/// Records for a regression split: one "plan" whose error is |mean - y|;
/// the uncertainty is the predictive variance.
inline std::vector<EvaluationRecord> regression_records(const std::vector<GaussianPrediction>& preds,
                                                        const std::vector<double>& targets,
                                                        double accuracy_threshold) {
  std::vector<EvaluationRecord> out;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    EvaluationRecord r;
    r.scene_id = i;
    r.plan_ades = {std::abs(preds[i].mean - targets[i])};
    r.certainties = {-preds[i].variance};
    r.uncertainty = preds[i].variance;
    r.weighted_ade = r.plan_ades[0];
    r.accurate = r.weighted_ade <= accuracy_threshold;
    out.push_back(r);
  }
  return out;
}

struct RegressionTrainResult : TrainResult<BnnParams> {
  RegressionCalibration calibration;  // original target units
  std::size_t eauc_first_epoch = 0;
};

inline RegressionTrainResult train_regression(const ExperimentConfig& cfg, const RegressionTable& table,
                                              std::uint64_t seed, Progress progress = {}) {
  const RegressionSplit train = regression_split(table, Split::train);
  const RegressionSplit val = regression_split(table, Split::validation);
  if (train.y.empty() || val.y.empty()) throw ConfigError("regression task: train and validation splits must be non-empty");
  const EaucConfig ecfg = cfg.eauc();
  ecfg.validate();

  BnnConfig bcfg;
  bcfg.input_dim = table.features.cols();
  bcfg.hidden = cfg.bnn_hidden;
  bcfg.dropout = cfg.dropout;
  RegressionTrainResult res;
  res.final_params = make_bnn_params(bcfg, seed);
  BnnParams& params = res.final_params;
  {
    double mean = 0.0, sq = 0.0;
    for (double y : train.y) mean += y;
    mean /= static_cast<double>(train.y.size());
    for (double y : train.y) sq += (y - mean) * (y - mean);
    params.target_mean = mean;
    params.target_std = std::sqrt(sq / static_cast<double>(train.y.size()));
    if (!(params.target_std > 0.0)) throw DomainError("regression task: training targets have zero variance");
  }
  const double ys = params.target_std;

  // Variance bounds: configured, or percentiles of the predictive variances
  // seen in the last epoch before the loss starts (never earlier than epoch 2).
  const bool auto_bounds = std::isnan(cfg.var_lo);
  res.eauc_first_epoch = auto_bounds ? std::max<std::size_t>(cfg.eauc_start_epoch, 2) : cfg.eauc_start_epoch;
  const std::size_t collect_epochs =
      auto_bounds ? std::min<std::size_t>(res.eauc_first_epoch - 1, std::max<std::size_t>(cfg.epochs, 1)) : 0;
  if (!auto_bounds) res.calibration = {cfg.var_lo, cfg.var_hi, ecfg.ade_scale};
  std::vector<double> seen_var;

  Sgd opt(cfg.momentum, cfg.weight_decay);
  const ScheduleInfo sched = schedule_for(cfg, train.y.size());
  std::size_t step = 0;
  const std::size_t n = train.y.size(), s_train = cfg.train_mc_samples;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const std::vector<std::size_t> order = epoch_permutation(n, seed, epoch);
    std::mt19937_64 drop_rng(mix_seed(seed, 0xd0, epoch));
    const bool active = ecfg.beta > 0.0 && epoch >= res.eauc_first_epoch;
    // Standardized-unit calibration for the graph; bounds live in original units.
    const RegressionCalibration cal_std{res.calibration.variance_lo / (ys * ys),
                                        res.calibration.variance_hi / (ys * ys), ecfg.ade_scale * ys};
    BatchStats stats;
    double lr = 0.0;
    for (std::size_t start = 0, batch = 1; start < n; start += cfg.batch_size, ++batch) {
      const std::size_t b = std::min<std::size_t>(cfg.batch_size, n - start);
      Tensor x({b, bcfg.input_dim}), y({b, 1});
      for (std::size_t r = 0; r < b; ++r) {
        const std::size_t i = order[start + r];
        for (std::size_t c = 0; c < bcfg.input_dim; ++c) x(r, c) = train.x(i, c);
        y[r] = (train.y[i] - params.target_mean) / ys;
      }
      ad::Tape tape;
      BoundParams p(tape, params.weights);
      ad::Var yv = tape.constant(y);
      bnn::McGraph g = bnn::mc_forward(p, bcfg, tape.constant(x), s_train, drop_rng);

      // Primary: per-pass Gaussian NLL under the observation noise.
      ad::Var noise = ad::add_bias(tape.constant(Tensor({b, 1})), g.noise_var);
      ad::Var primary;
      for (std::size_t s = 0; s < s_train; ++s) {
        ad::Var term = ad::mean(bnn::gaussian_nll_rows(g.passes[s], noise, yv));
        primary = s == 0 ? term : primary + term;
      }
      primary = (1.0 / static_cast<double>(s_train)) * primary;

      const double pv = primary.item();
      check_finite_loss(pv, epoch, batch, "primary loss");
      check_finite_values(g.variance.value(), epoch, batch, "predictive variance");
      double eauc_value = 0.0, eau = 0.0;
      ad::Var root = primary;
      if (epoch <= collect_epochs) {
        if (epoch == collect_epochs)
          for (double v : g.variance.value().values()) seen_var.push_back(v * ys * ys);
      } else {
        auto [err, cert] = bnn_error_and_certainty(g.mean, g.variance, yv, cal_std);
        ad::Var eauc = eauc_loss(soft_counts(err, cert, ecfg), ecfg);
        eauc_value = eauc.item();
        eau = eau_measure(hard_counts(err.value().storage(), cert.value().storage(), ecfg));
        if (active) root = total_loss(primary, eauc, ecfg);
      }
      check_finite_loss(root.item(), epoch, batch, "total loss");
      stats.add(pv, eauc_value, pv + ecfg.beta * eauc_value, eau);

      std::vector<Tensor> grads = p.gradients(tape.backward(root));
      check_finite_loss(clip_grad_norm(grads, cfg.grad_clip), epoch, batch, "gradient norm");
      lr = cosine_warmup_lr(cfg.sgd_lr, ++step, sched.warmup_steps, sched.total_steps);
      opt.step(params.weights, grads, lr);
    }
    if (auto_bounds && epoch == collect_epochs) {
      double lo = percentile(seen_var, cfg.var_percentile_lo);
      double hi = percentile(seen_var, cfg.var_percentile_hi);
      if (!(hi > lo)) hi = lo * (1.0 + 1e-6) + 1e-12;
      res.calibration = {lo, hi, ecfg.ade_scale};
    }
    const RegressionMetrics vm = regression_metrics(predict_split(params, val, cfg), val.y);
    TrainingLogEntry e = stats.entry(epoch);
    e.val_nll = vm.nll;
    e.val_rmse = vm.rmse;
    e.lr = lr;
    e.eauc_active = active;
    res.log.entries.push_back(e);
    res.log.epoch_seconds.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    if (e.val_nll < res.best_val_nll) {
      res.best_val_nll = e.val_nll;
      res.best_epoch = epoch;
      res.best_params = params;
    }
    progress("epoch ", epoch, "/", cfg.epochs, " primary=", e.primary, " eauc=", e.eauc, " val_nll=", e.val_nll,
             " val_rmse=", e.val_rmse);
  }
  if (res.best_epoch == 0) res.best_params = params;
  return res;
}

// ---------------------------------------------------------------------------
// Reports, records and curves
// ---------------------------------------------------------------------------

inline nlohmann::json bundle_json(const MetricBundle& b) {
  nlohmann::json j;
  j["count"] = b.count;
  j["weighted_ade"] = b.weighted_ade;
  j["r_auc"] = b.r_auc;
  j["f1_auc"] = b.f1_auc;
  j["f1_at_95"] = b.f1_at_95;
  j["pearson_r"] = b.pearson_r ? nlohmann::json(*b.pearson_r) : nlohmann::json();
  j["auroc"] = b.auroc ? nlohmann::json(*b.auroc) : nlohmann::json();
  return j;
}

inline nlohmann::json report_json(const EvaluationReport& rep, const ExperimentConfig& cfg) {
  nlohmann::json j;
  j["task"] = cfg.task;
  j["accuracy_threshold"] = cfg.accuracy_threshold;
  j["retention_grid"] = cfg.retention_grid;
  j["full"] = bundle_json(rep.full);
  if (rep.in_distribution) j["in_distribution"] = bundle_json(*rep.in_distribution);
  if (rep.shifted) j["shifted"] = bundle_json(*rep.shifted);
  return j;
}

inline void write_text_file(const std::filesystem::path& path, const std::string& body) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ConfigError("cannot write '" + path.string() + "'");
  os << body;
  if (!os) throw ConfigError("failed writing '" + path.string() + "'");
}

inline std::string curve_csv(const RetentionCurve& c) {
  std::ostringstream os;
  os << "fraction,value\n";
  for (const CurvePoint& p : c.points) os << text::format_double(p.fraction) << ',' << text::format_double(p.value) << '\n';
  return os.str();
}

/// Writes curves/<error|f1>_<partition>.csv and returns the file paths.
inline std::vector<std::filesystem::path> write_curves(const std::filesystem::path& dir, const EvaluationReport& rep) {
  std::vector<std::filesystem::path> out;
  auto emit = [&](const char* part, const MetricBundle& b) {
    for (auto [kind, curve] : {std::pair{"error", &b.error_curve}, std::pair{"f1", &b.f1_curve}}) {
      const auto path = dir / "curves" / (std::string(kind) + "_" + part + ".csv");
      write_text_file(path, curve_csv(*curve));
      out.push_back(path);
    }
  };
  emit("full", rep.full);
  if (rep.in_distribution) emit("in", *rep.in_distribution);
  if (rep.shifted) emit("shifted", *rep.shifted);
  return out;
}

// Records file:
//   # eauc-records v1 plans=<D>
//   scene_id,shifted,uncertainty,weighted_ade,accurate,ade_1..ade_D,c_1..c_D
inline void write_records(std::ostream& os, const std::vector<EvaluationRecord>& records) {
  const std::size_t d = records.empty() ? 0 : records.front().plan_ades.size();
  os << "# eauc-records v1 plans=" << d << '\n' << "scene_id,shifted,uncertainty,weighted_ade,accurate";
  for (std::size_t k = 1; k <= d; ++k) os << ",ade_" << k;
  for (std::size_t k = 1; k <= d; ++k) os << ",c_" << k;
  os << '\n';
  for (const EvaluationRecord& r : records) {
    if (r.plan_ades.size() != d || r.certainties.size() != d)
      throw ShapeError("write_records: every record needs " + std::to_string(d) + " plans");
    os << r.scene_id << ',' << (r.shifted ? 1 : 0) << ',' << text::format_double(r.uncertainty) << ','
       << text::format_double(r.weighted_ade) << ',' << (r.accurate ? 1 : 0);
    for (double v : r.plan_ades) os << ',' << text::format_double(v);
    for (double v : r.certainties) os << ',' << text::format_double(v);
    os << '\n';
  }
}

inline std::vector<EvaluationRecord> read_records(std::istream& is, const std::string& source = "<records>") {
  std::string line;
  std::size_t lineno = 1;
  if (!std::getline(is, line)) throw ParseError(source, 1, "empty records file");
  const std::string magic = "# eauc-records v1 plans=";
  std::uint64_t d = 0;
  if (line.rfind(magic, 0) != 0 || !text::parse_u64(text::trim(std::string_view(line).substr(magic.size())), d))
    throw ParseError(source, 1, "missing '# eauc-records v1 plans=<D>' header");
  if (!std::getline(is, line) || text::split(line, ',').size() != 5 + 2 * d)
    throw ParseError(source, 2, "column header does not match plans=" + std::to_string(d));
  ++lineno;
  std::vector<EvaluationRecord> out;
  while (std::getline(is, line)) {
    ++lineno;
    if (text::trim(line).empty()) continue;
    const auto cells = text::split(line, ',');
    if (cells.size() != 5 + 2 * d) {
      throw ParseError(source, lineno, "expected " + std::to_string(5 + 2 * d) + " fields, found " +
                                           std::to_string(cells.size()));
    }
    EvaluationRecord r;
    std::uint64_t flag = 0, acc = 0;
    bool ok = text::parse_u64(text::trim(cells[0]), r.scene_id) && text::parse_u64(text::trim(cells[1]), flag) &&
              text::parse_double(text::trim(cells[2]), r.uncertainty) &&
              text::parse_double(text::trim(cells[3]), r.weighted_ade) && text::parse_u64(text::trim(cells[4]), acc) &&
              flag <= 1 && acc <= 1;
    r.shifted = flag == 1;
    r.accurate = acc == 1;
    r.plan_ades.resize(d);
    r.certainties.resize(d);
    for (std::size_t k = 0; ok && k < d; ++k) {
      ok = text::parse_double(text::trim(cells[5 + k]), r.plan_ades[k]) &&
           text::parse_double(text::trim(cells[5 + d + k]), r.certainties[k]);
    }
    if (!ok) throw ParseError(source, lineno, "malformed record");
    out.push_back(std::move(r));
  }
  if (out.empty()) throw ParseError(source, lineno, "no records");
  return out;
}

/// Minimal SVG line chart of a "fraction,value" curve file.
inline std::string curve_svg(const std::filesystem::path& csv_path) {
  std::ifstream is(csv_path);
  if (!is) throw ConfigError("cannot open curve file '" + csv_path.string() + "'");
  std::string line;
  std::getline(is, line);
  std::vector<std::pair<double, double>> pts;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    const auto cells = text::split(line, ',');
    double f, v;
    if (cells.size() != 2 || !text::parse_double(cells[0], f) || !text::parse_double(cells[1], v))
      throw ParseError(csv_path.string(), lineno, "expected 'fraction,value'");
    pts.emplace_back(f, v);
  }
  if (pts.empty()) throw ParseError(csv_path.string(), lineno, "no curve points");
  double vmax = 0.0;
  for (const auto& [_, v] : pts) vmax = std::max(vmax, v);
  if (vmax <= 0.0) vmax = 1.0;
  constexpr double w = 480, h = 320, pad = 40;
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\">\n"
     << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
     << "<line x1=\"" << pad << "\" y1=\"" << h - pad << "\" x2=\"" << w - pad << "\" y2=\"" << h - pad
     << "\" stroke=\"black\"/>\n"
     << "<line x1=\"" << pad << "\" y1=\"" << pad << "\" x2=\"" << pad << "\" y2=\"" << h - pad
     << "\" stroke=\"black\"/>\n"
     << "<text x=\"" << w / 2 << "\" y=\"" << h - 8 << "\" text-anchor=\"middle\" font-size=\"12\">retained fraction</text>\n"
     << "<text x=\"" << pad << "\" y=\"" << pad - 10 << "\" font-size=\"12\">" << csv_path.stem().string()
     << " (max " << text::format_double(vmax) << ")</text>\n"
     << "<polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"2\" points=\"";
  for (const auto& [f, v] : pts) {
    const double x = pad + f * (w - 2 * pad), y = h - pad - v / vmax * (h - 2 * pad);
    os << text::format_double(std::round(x * 100) / 100) << ',' << text::format_double(std::round(y * 100) / 100)
       << ' ';
  }
  os << "\"/>\n</svg>\n";
  return os.str();
}

// ---------------------------------------------------------------------------
// Warmup threshold scan
// ---------------------------------------------------------------------------

struct ScanResult {
  std::vector<double> percentiles;
  std::vector<double> error_table;      // scaled error at each percentile
  std::vector<double> certainty_table;  // raw log-likelihood (trajectory) or variance (regression)
  double suggested_ade_th = 0.0;
  double suggested_c_th = 0.0;
  double suggested_clip_lo = 0.0;  // trajectory: log-likelihood clip; regression: variance bounds
  double suggested_clip_hi = 0.0;
};

inline nlohmann::json scan_json(const ScanResult& s, const ExperimentConfig& cfg) {
  nlohmann::json j;
  j["task"] = cfg.task;
  j["warmup_epochs"] = cfg.epochs;
  nlohmann::json rows = nlohmann::json::array();
  const bool traj = cfg.task == "trajectory";
  for (std::size_t i = 0; i < s.percentiles.size(); ++i) {
    rows.push_back({{"percentile", s.percentiles[i]},
                    {"scaled_error", s.error_table[i]},
                    {traj ? "loglik" : "variance", s.certainty_table[i]}});
  }
  j["table"] = rows;
  nlohmann::json sug;
  sug["ade_th"] = s.suggested_ade_th;
  sug["c_th"] = s.suggested_c_th;
  sug[traj ? "c_clip_lo" : "var_lo"] = s.suggested_clip_lo;
  sug[traj ? "c_clip_hi" : "var_hi"] = s.suggested_clip_hi;
  j["suggestions"] = sug;
  j["note"] = "suggestions are advisory and are not applied automatically";
  return j;
}

/// Trains with beta = 0 for cfg.epochs epochs, then summarizes the loss
/// inputs over the training set. Clip suggestions are the 0th and 100th
/// percentiles rounded outward to integers (trajectory) or the configured
/// variance percentiles (regression); thresholds sit at the configured
/// percentiles, the certainty one normalized with the suggested bounds.
inline ScanResult warmup_threshold_scan(ExperimentConfig cfg, Progress progress = {}) {
  if (cfg.epochs == 0) throw ConfigError("warmup-scan: at least one warmup epoch is required");
  cfg.beta = 0.0;
  ScanResult s;
  s.percentiles = parse_double_list(cfg.scan_percentiles, "scan_percentiles");
  const EaucConfig ecfg = cfg.eauc();
  std::vector<double> err, cert;
  if (cfg.task == "trajectory") {
    const TrajectoryData data = load_trajectory_data(cfg, false);
    const TrajTrainResult tr = train_trajectory(cfg, data.train, data.val, cfg.seed, progress);
    const TrajModelConfig& m = tr.final_params.config;
    std::mt19937_64 eps_rng(mix_seed(cfg.seed, 0x5ca9));
    for (std::size_t start = 0; start < data.train.size(); start += 256) {
      std::vector<std::size_t> idx(std::min<std::size_t>(256, data.train.size() - start));
      std::iota(idx.begin(), idx.end(), start);
      ad::Tape tape;
      BoundParams p(tape, tr.final_params.weights);
      const TrajBatchGraph g = traj_batch_graph(p, m, tape, gather(data.train, idx), eps_rng);
      for (double v : g.raw_ade.value().values()) err.push_back(scale_ade(v, ecfg));
      for (double v : g.raw_ll.value().values()) cert.push_back(v);
    }
    s.suggested_clip_lo = std::floor(percentile(cert, 0.0));
    s.suggested_clip_hi = std::ceil(percentile(cert, 100.0));
    if (s.suggested_clip_hi <= s.suggested_clip_lo) s.suggested_clip_hi = s.suggested_clip_lo + 1.0;
    s.suggested_c_th = (percentile(cert, cfg.suggest_c_percentile) - s.suggested_clip_lo) /
                       (s.suggested_clip_hi - s.suggested_clip_lo);
  } else {
    const RegressionTable table = load_regression_data(cfg);
    const RegressionTrainResult tr = train_regression(cfg, table, cfg.seed, progress);
    const RegressionSplit train = regression_split(table, Split::train);
    const auto preds = predict_split(tr.final_params, train, cfg);
    for (std::size_t i = 0; i < preds.size(); ++i) {
      err.push_back(std::abs(preds[i].mean - train.y[i]) * ecfg.ade_scale);
      cert.push_back(preds[i].variance);
    }
    s.suggested_clip_lo = percentile(cert, cfg.var_percentile_lo);
    s.suggested_clip_hi = percentile(cert, cfg.var_percentile_hi);
    if (!(s.suggested_clip_hi > s.suggested_clip_lo)) s.suggested_clip_hi = s.suggested_clip_lo * (1 + 1e-6) + 1e-12;
    // Certainty falls as variance rises, so the c percentile maps to the
    // mirrored variance percentile.
    const double v = std::clamp(percentile(cert, 100.0 - cfg.suggest_c_percentile), s.suggested_clip_lo,
                                s.suggested_clip_hi);
    s.suggested_c_th = 1.0 - (v - s.suggested_clip_lo) / (s.suggested_clip_hi - s.suggested_clip_lo);
  }
  s.suggested_c_th = std::clamp(s.suggested_c_th, 0.01, 0.99);
  for (double p : s.percentiles) {
    s.error_table.push_back(percentile(err, p));
    s.certainty_table.push_back(percentile(cert, p));
  }
  s.suggested_ade_th = std::max(percentile(err, cfg.suggest_ade_percentile), 1e-6);
  return s;
}

// ---------------------------------------------------------------------------
// Grid search
// ---------------------------------------------------------------------------

struct GridRow {
  double ade_th = 0.0, c_th = 0.0, beta = 0.0;
  double val_r_auc = 0.0;
  double val_error = 0.0;  // weightedADE (trajectory) or RMSE (regression)
};

/// Trains one model per (ade_th, c_th, beta) cell for grid_epochs epochs
/// and ranks cells by validation R-AUC. Cells are enumerated in
/// lexicographic order and ranked with a stable sort, so ties keep that
/// order.
inline std::vector<GridRow> grid_search(const ExperimentConfig& base, Progress progress = {}) {
  const auto ades = parse_double_list(base.grid_ade_th, "grid_ade_th");
  const auto cths = parse_double_list(base.grid_c_th, "grid_c_th");
  const auto betas = parse_double_list(base.grid_beta, "grid_beta");
  std::vector<double> sorted_ades = ades, sorted_cths = cths, sorted_betas = betas;
  std::sort(sorted_ades.begin(), sorted_ades.end());
  std::sort(sorted_cths.begin(), sorted_cths.end());
  std::sort(sorted_betas.begin(), sorted_betas.end());

  std::optional<TrajectoryData> traj_data;
  std::optional<RegressionTable> table;
  if (base.task == "trajectory") traj_data = load_trajectory_data(base, false);
  else table = load_regression_data(base);

  std::vector<GridRow> rows;
  for (double a : sorted_ades)
    for (double c : sorted_cths)
      for (double b : sorted_betas) {
        ExperimentConfig cfg = base;
        cfg.ade_th = a;
        cfg.c_th = c;
        cfg.beta = b;
        cfg.epochs = base.grid_epochs;
        cfg.eauc().validate();
        GridRow row{a, c, b, 0.0, 0.0};
        progress("grid cell ade_th=", a, " c_th=", c, " beta=", b);
        if (traj_data) {
          const TrajTrainResult tr = train_trajectory(cfg, traj_data->train, traj_data->val, cfg.seed);
          const TrajModelParams members[1] = {tr.final_params};
          const auto records = evaluate_trajectory(members, traj_data->val, cfg);
          const MetricBundle mb = compute_bundle(records, cfg.accuracy_threshold, cfg.retention_grid);
          row.val_r_auc = mb.r_auc;
          row.val_error = mb.weighted_ade;
        } else {
          const RegressionTrainResult tr = train_regression(cfg, *table, cfg.seed);
          const RegressionSplit val = regression_split(*table, Split::validation);
          const auto preds = predict_split(tr.final_params, val, cfg);
          const auto records = regression_records(preds, val.y, cfg.accuracy_threshold);
          row.val_r_auc = compute_bundle(records, cfg.accuracy_threshold, cfg.retention_grid).r_auc;
          row.val_error = regression_metrics(preds, val.y).rmse;
        }
        rows.push_back(row);
      }
  std::stable_sort(rows.begin(), rows.end(),
                   [](const GridRow& x, const GridRow& y) { return x.val_r_auc < y.val_r_auc; });
  return rows;
}

inline std::string grid_csv(const std::vector<GridRow>& rows, const std::string& task) {
  using text::format_double;
  std::ostringstream os;
  os << "rank,ade_th,c_th,beta,val_r_auc," << (task == "trajectory" ? "val_weighted_ade" : "val_rmse") << '\n';
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const GridRow& r = rows[i];
    os << i + 1 << ',' << format_double(r.ade_th) << ',' << format_double(r.c_th) << ',' << format_double(r.beta)
       << ',' << format_double(r.val_r_auc) << ',' << format_double(r.val_error) << '\n';
  }
  return os.str();
}

}  // namespace eauc
