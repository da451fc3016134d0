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

// Gaussian encoder-decoder trajectory predictor.
//
// A two-layer tanh MLP encodes the flat context vector into the initial
// GRU state. The GRU is unrolled over the horizon; at every step it consumes
// the previous state (ground truth when teacher forcing, the previous sample
// when sampling) and a linear head emits a displacement from that state plus
// a per-axis log standard deviation. Each step is an axis-aligned Gaussian.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "eauc/autodiff.hpp"
#include "eauc/error.hpp"
#include "eauc/params.hpp"
#include "eauc/tensor.hpp"

namespace eauc {

struct Point2 {
  double x = 0.0;
  double y = 0.0;
  friend bool operator==(const Point2&, const Point2&) = default;
};

struct Trajectory {
  std::vector<Point2> states;
  double timestep = 0.2;

  std::size_t horizon() const { return states.size(); }
};

struct SceneSample {
  std::uint64_t scene_id = 0;
  std::vector<double> context;
  Trajectory target;
  bool shifted = false;
};

struct GaussianStep {
  Point2 mu;
  Point2 sigma;
};

struct ScoredTrajectory {
  Trajectory trajectory;
  double loglik = 0.0;
};

/// D plans ordered by descending certainty. `uncertainty` is the negated
/// mean of `certainties`.
struct PlanSet {
  std::vector<Trajectory> plans;
  std::vector<double> certainties;
  double uncertainty = 0.0;
};

struct TrajModelConfig {
  std::size_t context_dim = 25;
  std::size_t horizon = 25;
  std::size_t hidden = 64;
  double timestep = 0.2;
  // Encoder inputs are context features times context_scale; decoder inputs
  // are positions in meters times input_scale.
  double context_scale = 0.1;
  double input_scale = 0.1;
  double log_sigma_min = -7.0;
  double log_sigma_max = 5.0;
};

struct TrajModelParams {
  TrajModelConfig config;
  ParamStore weights;
};

inline TrajModelParams make_traj_params(const TrajModelConfig& cfg, std::uint64_t seed) {
  if (cfg.context_dim == 0 || cfg.horizon == 0 || cfg.hidden == 0) {
    throw ConfigError("trajectory model: context_dim, horizon and hidden must be positive");
  }
  std::mt19937_64 rng(mix_seed(seed, 0x7261));
  const std::size_t c = cfg.context_dim, h = cfg.hidden;
  TrajModelParams p{cfg, {}};
  auto& w = p.weights;
  w.add("enc_w1", glorot({c, h}, rng));
  w.add("enc_b1", Tensor({1, h}));
  w.add("enc_w2", glorot({h, h}, rng));
  w.add("enc_b2", Tensor({1, h}));
  for (const char* gate : {"z", "r", "n"}) {
    const std::string g(gate);
    w.add("gru_w" + g, glorot({2, h}, rng));
    w.add("gru_u" + g, glorot({h, h}, rng));
    w.add("gru_b" + g, Tensor({1, h}));
  }
  w.add("head_mu_w", glorot({h, 2}, rng));
  w.add("head_mu_b", Tensor({1, 2}));
  w.add("head_ls_w", glorot({h, 2}, rng));
  w.add("head_ls_b", Tensor({1, 2}));
  return p;
}

/// Zero weights everywhere; handy for closed-form checks.
inline TrajModelParams make_zero_traj_params(const TrajModelConfig& cfg) {
  TrajModelParams p = make_traj_params(cfg, 0);
  for (auto& [_, t] : p.weights.entries()) t.fill(0.0);
  return p;
}

inline void validate_traj_params(const TrajModelParams& p) {
  const auto& cfg = p.config;
  const std::size_t c = cfg.context_dim, h = cfg.hidden;
  auto expect = [&](const char* name, Shape s) {
    const Tensor& t = p.weights.at(name);
    if (t.shape() != s) {
      throw ShapeError(std::string("trajectory params: '") + name + "' has shape " + t.shape().str() + ", expected " +
                       s.str());
    }
  };
  expect("enc_w1", {c, h});
  expect("enc_b1", {1, h});
  expect("enc_w2", {h, h});
  expect("enc_b2", {1, h});
  for (const char* g : {"z", "r", "n"}) {
    expect((std::string("gru_w") + g).c_str(), {2, h});
    expect((std::string("gru_u") + g).c_str(), {h, h});
    expect((std::string("gru_b") + g).c_str(), {1, h});
  }
  expect("head_mu_w", {h, 2});
  expect("head_mu_b", {1, 2});
  expect("head_ls_w", {h, 2});
  expect("head_ls_b", {1, 2});
  if (!p.weights.all_finite()) throw DomainError("trajectory params: non-finite weight");
}

namespace traj {

inline constexpr double kLog2Pi = 1.8378770664093453;  // log(2*pi)

/// Row-wise log density of x under independent Gaussians (mu, exp(log_sigma)).
/// All inputs B x k; returns B x 1.
inline ad::Var gaussian_logpdf_rows(ad::Var x, ad::Var mu, ad::Var log_sigma) {
  ad::Var z = (x - mu) * ad::exp(-log_sigma);
  ad::Var per_dim = (-0.5 * (z * z)) - log_sigma;
  return ad::row_sum(per_dim) + (-0.5 * kLog2Pi * static_cast<double>(x.shape().cols));
}

/// contexts: B x context_dim. Returns B x hidden.
inline ad::Var encode(const BoundParams& p, const TrajModelConfig& cfg, ad::Var contexts) {
  ad::Var h1 = ad::tanh(ad::add_bias(ad::matmul(cfg.context_scale * contexts, p["enc_w1"]), p["enc_b1"]));
  return ad::tanh(ad::add_bias(ad::matmul(h1, p["enc_w2"]), p["enc_b2"]));
}

struct StepGraph {
  ad::Var hidden;
  ad::Var mu;         // B x 2
  ad::Var log_sigma;  // B x 2
};

inline StepGraph decode_step(const BoundParams& p, const TrajModelConfig& cfg, ad::Var prev, ad::Var hidden) {
  using namespace ad;
  Var x = cfg.input_scale * prev;
  Var z = sigmoid(add_bias(matmul(x, p["gru_wz"]) + matmul(hidden, p["gru_uz"]), p["gru_bz"]));
  Var r = sigmoid(add_bias(matmul(x, p["gru_wr"]) + matmul(hidden, p["gru_ur"]), p["gru_br"]));
  Var n = tanh(add_bias(matmul(x, p["gru_wn"]) + r * matmul(hidden, p["gru_un"]), p["gru_bn"]));
  Var next = n + z * (hidden - n);
  Var mu = prev + add_bias(matmul(next, p["head_mu_w"]), p["head_mu_b"]);
  Var ls = clamp(add_bias(matmul(next, p["head_ls_w"]), p["head_ls_b"]), cfg.log_sigma_min, cfg.log_sigma_max);
  return {next, mu, ls};
}

struct TeacherForcedGraph {
  ad::Var loglik;  // B x 1
  std::vector<ad::Var> mu;
  std::vector<ad::Var> log_sigma;
};

/// Teacher-forced pass over a batch. `targets[t]` is B x 2 holding s_{t+1}
/// for every row.
inline TeacherForcedGraph teacher_forced(const BoundParams& p, const TrajModelConfig& cfg, ad::Var contexts,
                                         std::span<const Tensor> targets) {
  ad::Tape& tape = contexts.tape();
  const std::size_t batch = contexts.shape().rows;
  TeacherForcedGraph out;
  ad::Var hidden = encode(p, cfg, contexts);
  ad::Var prev = tape.constant(Tensor({batch, 2}));
  ad::Var total;
  for (std::size_t t = 0; t < targets.size(); ++t) {
    StepGraph step = decode_step(p, cfg, prev, hidden);
    ad::Var truth = tape.constant(targets[t]);
    ad::Var ll = gaussian_logpdf_rows(truth, step.mu, step.log_sigma);
    total = t == 0 ? ll : total + ll;
    out.mu.push_back(step.mu);
    out.log_sigma.push_back(step.log_sigma);
    hidden = step.hidden;
    prev = truth;
  }
  out.loglik = total;
  return out;
}

struct ReparamSampleGraph {
  ad::Var ade;     // B x 1, meters
  ad::Var loglik;  // B x 1
};

/// Draws y_t = mu_t + sigma_t * eps_t from the teacher-forced step
/// distributions and returns its ADE against the targets and its
/// log-likelihood under those distributions. Both are differentiable.
inline ReparamSampleGraph reparameterized_sample(const TeacherForcedGraph& tf, std::span<const Tensor> targets,
                                                 std::span<const Tensor> eps) {
  ad::Tape& tape = tf.loglik.tape();
  ad::Var dist_sum, ll_sum;
  const std::size_t horizon = targets.size();
  for (std::size_t t = 0; t < horizon; ++t) {
    ad::Var e = tape.constant(eps[t]);
    ad::Var y = tf.mu[t] + ad::exp(tf.log_sigma[t]) * e;
    ad::Var diff = y - tape.constant(targets[t]);
    ad::Var dist = ad::sqrt(ad::row_sum(diff * diff) + 1e-12);
    ad::Var ll = gaussian_logpdf_rows(y, tf.mu[t], tf.log_sigma[t]);
    dist_sum = t == 0 ? dist : dist_sum + dist;
    ll_sum = t == 0 ? ll : ll_sum + ll;
  }
  return {(1.0 / static_cast<double>(horizon)) * dist_sum, ll_sum};
}

inline Tensor stack_contexts(std::span<const std::vector<double>* const> contexts, std::size_t dim) {
  Tensor out({contexts.size(), dim});
  for (std::size_t r = 0; r < contexts.size(); ++r) {
    if (contexts[r]->size() != dim) {
      throw ShapeError("context length " + std::to_string(contexts[r]->size()) + " does not match configured " +
                       std::to_string(dim));
    }
    std::copy(contexts[r]->begin(), contexts[r]->end(), &out(r, 0));
  }
  return out;
}

/// Per-step B x 2 target tensors from a batch of trajectories.
inline std::vector<Tensor> stack_targets(std::span<const Trajectory* const> trajs, std::size_t horizon) {
  std::vector<Tensor> out(horizon, Tensor({trajs.size(), 2}));
  for (std::size_t r = 0; r < trajs.size(); ++r) {
    if (trajs[r]->horizon() != horizon) {
      throw ShapeError("trajectory horizon " + std::to_string(trajs[r]->horizon()) + " does not match configured " +
                       std::to_string(horizon));
    }
    for (std::size_t t = 0; t < horizon; ++t) {
      out[t](r, 0) = trajs[r]->states[t].x;
      out[t](r, 1) = trajs[r]->states[t].y;
    }
  }
  return out;
}

}  // namespace traj

/// Latent of a single context.
inline std::vector<double> encode(const TrajModelParams& params, std::span<const double> context) {
  if (context.size() != params.config.context_dim) {
    throw ShapeError("encode: context length " + std::to_string(context.size()) + " does not match configured " +
                     std::to_string(params.config.context_dim));
  }
  ad::Tape tape;
  BoundParams p(tape, params.weights);
  ad::Var x = tape.constant(Tensor({1, context.size()}, std::vector<double>(context.begin(), context.end())));
  return traj::encode(p, params.config, x).value().storage();
}

struct TeacherForcedResult {
  std::vector<GaussianStep> steps;
  double loglik = 0.0;
};

/// Sum over steps of log N(s_t | mu_t, diag(sigma_t^2)), decoding each step
/// from the ground-truth previous state.
inline TeacherForcedResult teacher_forced_loglik(const TrajModelParams& params, std::span<const double> context,
                                                 const Trajectory& target) {
  const auto& cfg = params.config;
  if (context.size() != cfg.context_dim) {
    throw ShapeError("teacher_forced_loglik: context length " + std::to_string(context.size()) +
                     " does not match configured " + std::to_string(cfg.context_dim));
  }
  if (target.horizon() != cfg.horizon) {
    throw ShapeError("teacher_forced_loglik: horizon " + std::to_string(target.horizon()) +
                     " does not match configured " + std::to_string(cfg.horizon));
  }
  ad::Tape tape;
  BoundParams p(tape, params.weights);
  ad::Var x = tape.constant(Tensor({1, context.size()}, std::vector<double>(context.begin(), context.end())));
  const Trajectory* one[1] = {&target};
  const std::vector<Tensor> targets = traj::stack_targets(one, cfg.horizon);
  traj::TeacherForcedGraph g = traj::teacher_forced(p, cfg, x, targets);

  TeacherForcedResult out;
  double acc = 0.0;
  for (std::size_t t = 0; t < cfg.horizon; ++t) {
    const Tensor& mu = g.mu[t].value();
    const Tensor& ls = g.log_sigma[t].value();
    GaussianStep s{{mu[0], mu[1]}, {std::exp(ls[0]), std::exp(ls[1])}};
    const Point2& y = target.states[t];
    const double zx = (y.x - s.mu.x) / s.sigma.x, zy = (y.y - s.mu.y) / s.sigma.y;
    acc += -traj::kLog2Pi - ls[0] - ls[1] - 0.5 * (zx * zx + zy * zy);
    if (!std::isfinite(acc)) {
      throw DomainError("teacher_forced_loglik: non-finite likelihood at step " + std::to_string(t));
    }
    out.steps.push_back(s);
  }
  out.loglik = g.loglik.value()[0];
  return out;
}

/// Log-likelihood of each row trajectory under the model, teacher forced.
inline std::vector<double> score_trajectories(const TrajModelParams& params,
                                              std::span<const std::vector<double>* const> contexts,
                                              std::span<const Trajectory* const> trajs) {
  const auto& cfg = params.config;
  ad::Tape tape;
  BoundParams p(tape, params.weights);
  ad::Var x = tape.constant(traj::stack_contexts(contexts, cfg.context_dim));
  const std::vector<Tensor> targets = traj::stack_targets(trajs, cfg.horizon);
  const Tensor& ll = traj::teacher_forced(p, cfg, x, targets).loglik.value();
  return ll.storage();
}

/// Samples G trajectories for each context by autoregressive reparameterized
/// sampling (y_t = mu_t + temperature * sigma_t * eps_t). Each trajectory is
/// scored by its model log-likelihood. Scene i draws its noise from its own
/// stream seeded by seeds[i], so results do not depend on batch composition.
inline std::vector<std::vector<ScoredTrajectory>> sample_plans_batch(
    const TrajModelParams& params, std::span<const std::vector<double>* const> contexts, std::size_t count,
    std::span<const std::uint64_t> seeds, double temperature = 1.0) {
  if (count == 0) throw ConfigError("sample_plans: G must be at least 1");
  if (seeds.size() != contexts.size()) throw ShapeError("sample_plans: one seed per context required");
  const auto& cfg = params.config;
  const std::size_t scenes = contexts.size(), rows = scenes * count;

  std::vector<const std::vector<double>*> repeated;
  repeated.reserve(rows);
  for (const auto* c : contexts)
    for (std::size_t g = 0; g < count; ++g) repeated.push_back(c);

  std::vector<std::mt19937_64> rngs;
  rngs.reserve(scenes);
  for (std::uint64_t s : seeds) rngs.emplace_back(s);
  std::normal_distribution<double> normal(0.0, 1.0);

  ad::Tape tape;
  BoundParams p(tape, params.weights);
  ad::Var hidden = traj::encode(p, cfg, tape.constant(traj::stack_contexts(repeated, cfg.context_dim)));
  ad::Var prev = tape.constant(Tensor({rows, 2}));
  std::vector<std::vector<ScoredTrajectory>> out(scenes, std::vector<ScoredTrajectory>(count));
  for (auto& per_scene : out)
    for (auto& s : per_scene) {
      s.trajectory.timestep = cfg.timestep;
      s.trajectory.states.reserve(cfg.horizon);
    }

  Tensor loglik({rows, 1});
  for (std::size_t t = 0; t < cfg.horizon; ++t) {
    traj::StepGraph step = traj::decode_step(p, cfg, prev, hidden);
    const Tensor& mu = step.mu.value();
    const Tensor& ls = step.log_sigma.value();
    Tensor y({rows, 2});
    for (std::size_t i = 0; i < scenes; ++i) {
      for (std::size_t g = 0; g < count; ++g) {
        const std::size_t r = i * count + g;
        for (std::size_t d = 0; d < 2; ++d) {
          const double e = normal(rngs[i]);
          y(r, d) = mu(r, d) + temperature * std::exp(ls(r, d)) * e;
          const double z = (y(r, d) - mu(r, d)) / std::exp(ls(r, d));
          loglik[r] += -0.5 * traj::kLog2Pi - ls(r, d) - 0.5 * z * z;
        }
        out[i][g].trajectory.states.push_back({y(r, 0), y(r, 1)});
      }
    }
    hidden = step.hidden;
    prev = tape.constant(std::move(y));
  }
  for (std::size_t i = 0; i < scenes; ++i)
    for (std::size_t g = 0; g < count; ++g) out[i][g].loglik = loglik[i * count + g];
  return out;
}

inline std::vector<ScoredTrajectory> sample_plans(const TrajModelParams& params, std::span<const double> context,
                                                  std::size_t count, std::uint64_t seed, double temperature = 1.0) {
  if (context.size() != params.config.context_dim) {
    throw ShapeError("sample_plans: context length " + std::to_string(context.size()) + " does not match configured " +
                     std::to_string(params.config.context_dim));
  }
  const std::vector<double> ctx(context.begin(), context.end());
  const std::vector<double>* one[1] = {&ctx};
  const std::uint64_t seeds[1] = {seed};
  return std::move(sample_plans_batch(params, one, count, seeds, temperature)[0]);
}

/// Keeps the D highest-scored samples in descending order (ties keep sample
/// order) and sets U = -mean of their scores.
inline PlanSet top_d_plans(std::span<const ScoredTrajectory> samples, std::size_t d) {
  if (d == 0) throw ConfigError("top_d_plans: D must be at least 1");
  if (d > samples.size()) {
    throw ConfigError("top_d_plans: D=" + std::to_string(d) + " exceeds " + std::to_string(samples.size()) +
                      " available samples");
  }
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return samples[a].loglik > samples[b].loglik; });
  PlanSet out;
  double total = 0.0;
  for (std::size_t k = 0; k < d; ++k) {
    out.plans.push_back(samples[order[k]].trajectory);
    out.certainties.push_back(samples[order[k]].loglik);
    total += samples[order[k]].loglik;
  }
  out.uncertainty = -total / static_cast<double>(d);
  return out;
}

/// Pools samples drawn by K models. `member_scores[i][k]` is the
/// log-likelihood of pooled trajectory i under member k; each trajectory is
/// rescored by the mean over members before top-D selection.
inline PlanSet ensemble_aggregate(std::span<const Trajectory> pooled,
                                  const std::vector<std::vector<double>>& member_scores, std::size_t d) {
  if (pooled.size() != member_scores.size()) throw ShapeError("ensemble_aggregate: one score row per trajectory");
  if (pooled.empty()) throw ConfigError("ensemble_aggregate: no samples");
  const std::size_t horizon = pooled.front().horizon();
  std::vector<ScoredTrajectory> rescored;
  rescored.reserve(pooled.size());
  for (std::size_t i = 0; i < pooled.size(); ++i) {
    if (pooled[i].horizon() != horizon) {
      throw ShapeError("ensemble_aggregate: mismatched horizons " + std::to_string(horizon) + " and " +
                       std::to_string(pooled[i].horizon()));
    }
    const auto& row = member_scores[i];
    if (row.empty()) throw ConfigError("ensemble_aggregate: K must be at least 1");
    double acc = 0.0;
    for (double s : row) acc += s;
    rescored.push_back({pooled[i], acc / static_cast<double>(row.size())});
  }
  return top_d_plans(rescored, d);
}

}  // namespace eauc
