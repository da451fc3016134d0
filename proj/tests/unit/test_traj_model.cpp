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

#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "eauc/traj_model.hpp"

using namespace eauc;

namespace {

constexpr double kLog2Pi = 1.8378770664093453;

TrajModelConfig small_config(std::size_t horizon = 4) {
  TrajModelConfig c;
  c.context_dim = 6;
  c.horizon = horizon;
  c.hidden = 8;
  return c;
}

Trajectory zeros(std::size_t t) { return Trajectory{std::vector<Point2>(t), 0.2}; }

std::vector<double> ramp_context(std::size_t n) {
  std::vector<double> c(n);
  for (std::size_t i = 0; i < n; ++i) c[i] = 0.5 * static_cast<double>(i) - 1.0;
  return c;
}

// Independent encoder: tanh(tanh(s*x W1 + b1) W2 + b2) with plain loops.
std::vector<double> reference_encode(const TrajModelParams& p, const std::vector<double>& x) {
  const std::size_t c = p.config.context_dim, h = p.config.hidden;
  const Tensor &w1 = p.weights.at("enc_w1"), &b1 = p.weights.at("enc_b1");
  const Tensor &w2 = p.weights.at("enc_w2"), &b2 = p.weights.at("enc_b2");
  std::vector<double> h1(h), out(h);
  for (std::size_t j = 0; j < h; ++j) {
    double a = b1[j];
    for (std::size_t i = 0; i < c; ++i) a += p.config.context_scale * x[i] * w1[i * h + j];
    h1[j] = std::tanh(a);
  }
  for (std::size_t j = 0; j < h; ++j) {
    double a = b2[j];
    for (std::size_t i = 0; i < h; ++i) a += h1[i] * w2[i * h + j];
    out[j] = std::tanh(a);
  }
  return out;
}

}  // namespace

TEST(TrajEncode, ZeroWeightsGiveZeroLatent) {
  const TrajModelParams p = make_zero_traj_params(small_config());
  for (double v : encode(p, ramp_context(6))) EXPECT_EQ(v, 0.0);
}

TEST(TrajEncode, MatchesLoopReference) {
  const TrajModelParams p = make_traj_params(small_config(), 17);
  const auto ctx = ramp_context(6);
  const auto got = encode(p, ctx);
  const auto want = reference_encode(p, ctx);
  ASSERT_EQ(got.size(), want.size());
  for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], want[i], 1e-12);
}

TEST(TrajEncode, ContextLengthMismatchThrows) {
  const TrajModelParams p = make_traj_params(small_config(), 1);
  EXPECT_THROW((void)encode(p, std::vector<double>(5)), ShapeError);
}

TEST(TrajParams, SeedDeterminesInit) {
  const TrajModelParams a = make_traj_params(small_config(), 3), b = make_traj_params(small_config(), 3),
                        c = make_traj_params(small_config(), 4);
  EXPECT_EQ(a.weights.at("gru_uz").storage(), b.weights.at("gru_uz").storage());
  EXPECT_NE(a.weights.at("gru_uz").storage(), c.weights.at("gru_uz").storage());
  EXPECT_NO_THROW(validate_traj_params(a));
}

TEST(TeacherForced, StandardNormalClosedForm) {
  // Zero weights: mu_t = s_{t-1}, sigma = exp(head_ls_b) = 1.
  const std::size_t t = 4;
  const TrajModelParams p = make_zero_traj_params(small_config(t));
  const auto r = teacher_forced_loglik(p, ramp_context(6), zeros(t));
  EXPECT_NEAR(r.loglik, -static_cast<double>(t) * kLog2Pi, 1e-12);
  ASSERT_EQ(r.steps.size(), t);
  EXPECT_EQ(r.steps[0].sigma.x, 1.0);
}

TEST(TeacherForced, DoublingSigmaLowersByTwoLogTwoPerStep) {
  const std::size_t t = 5;
  TrajModelParams p = make_zero_traj_params(small_config(t));
  const double base = teacher_forced_loglik(p, ramp_context(6), zeros(t)).loglik;
  p.weights.at("head_ls_b").fill(std::log(2.0));
  const double doubled = teacher_forced_loglik(p, ramp_context(6), zeros(t)).loglik;
  EXPECT_NEAR(base - doubled, static_cast<double>(t) * 2.0 * std::log(2.0), 1e-12);
}

TEST(TeacherForced, SingleStepValue) {
  const TrajModelParams p = make_zero_traj_params(small_config(1));
  EXPECT_NEAR(teacher_forced_loglik(p, ramp_context(6), zeros(1)).loglik, -1.837877, 1e-6);
  // Residual (1, 0) costs 0.5 nats.
  Trajectory off{{{1.0, 0.0}}, 0.2};
  EXPECT_NEAR(teacher_forced_loglik(p, ramp_context(6), off).loglik, -1.837877 - 0.5, 1e-6);
}

TEST(TeacherForced, ConditionsOnGroundTruthPrefix) {
  // With zero weights step t is centered on s_{t-1}, so a constant offset
  // costs only at the first step.
  const TrajModelParams p = make_zero_traj_params(small_config(3));
  Trajectory held{{{2.0, 0.0}, {2.0, 0.0}, {2.0, 0.0}}, 0.2};
  EXPECT_NEAR(teacher_forced_loglik(p, ramp_context(6), held).loglik, -3.0 * kLog2Pi - 2.0, 1e-12);
}

TEST(TeacherForced, HorizonMismatchThrows) {
  const TrajModelParams p = make_traj_params(small_config(4), 1);
  EXPECT_THROW((void)teacher_forced_loglik(p, ramp_context(6), zeros(3)), ShapeError);
  const auto ctx = ramp_context(6);
  const std::vector<double>* c[1] = {&ctx};
  const Trajectory bad = zeros(5);
  const Trajectory* tr[1] = {&bad};
  EXPECT_THROW((void)score_trajectories(p, c, tr), ShapeError);
}

TEST(TeacherForced, ParameterGradientMatchesFiniteDifference) {
  TrajModelConfig cfg = small_config(2);
  cfg.hidden = 4;
  TrajModelParams params = make_traj_params(cfg, 21);
  for (auto& [_, t] : params.weights.entries())
    for (double& v : t.storage()) v += 0.05;  // move biases off zero
  const auto ctx = ramp_context(cfg.context_dim);
  Trajectory target{{{0.3, -0.2}, {0.7, 0.1}}, 0.2};

  ad::Tape tape;
  BoundParams bound(tape, params.weights);
  ad::Var x = tape.constant(Tensor({1, ctx.size()}, ctx));
  const Trajectory* one[1] = {&target};
  const auto targets = traj::stack_targets(one, cfg.horizon);
  ad::Var ll = traj::teacher_forced(bound, cfg, x, targets).loglik;
  const std::vector<Tensor> grads = bound.gradients(tape.backward(ll));

  const double h = 1e-6;
  std::size_t k = 0;
  for (auto& [name, t] : params.weights.entries()) {
    for (std::size_t i = 0; i < t.size(); i += 3) {
      const double saved = t[i];
      t[i] = saved + h;
      const double up = teacher_forced_loglik(params, ctx, target).loglik;
      t[i] = saved - h;
      const double down = teacher_forced_loglik(params, ctx, target).loglik;
      t[i] = saved;
      const double fd = (up - down) / (2 * h);
      EXPECT_NEAR(grads[k][i], fd, 1e-6 + 1e-5 * std::abs(fd)) << name << "[" << i << "]";
    }
    ++k;
  }
}

TEST(ScoreTrajectories, AgreesWithSingleScenePath) {
  const TrajModelParams p = make_traj_params(small_config(), 5);
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<std::vector<double>> ctxs(3, std::vector<double>(6));
  std::vector<Trajectory> trs(3, zeros(4));
  for (auto& c : ctxs)
    for (double& v : c) v = n(rng);
  for (auto& t : trs)
    for (auto& s : t.states) s = {n(rng), n(rng)};
  std::vector<const std::vector<double>*> cp;
  std::vector<const Trajectory*> tp;
  for (int i = 0; i < 3; ++i) {
    cp.push_back(&ctxs[i]);
    tp.push_back(&trs[i]);
  }
  const auto scores = score_trajectories(p, cp, tp);
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(scores[i], teacher_forced_loglik(p, ctxs[i], trs[i]).loglik, 1e-10);
}

TEST(SamplePlans, ZeroTemperatureCollapsesToMean) {
  const TrajModelParams p = make_traj_params(small_config(), 9);
  const auto plans = sample_plans(p, ramp_context(6), 5, 123, 0.0);
  ASSERT_EQ(plans.size(), 5u);
  for (const auto& s : plans) {
    for (std::size_t t = 0; t < 4; ++t) {
      EXPECT_EQ(s.trajectory.states[t], plans[0].trajectory.states[t]);
    }
    EXPECT_DOUBLE_EQ(s.loglik, plans[0].loglik);
  }
}

TEST(SamplePlans, TinySigmaCollapses) {
  TrajModelParams p = make_traj_params(small_config(), 9);
  p.weights.at("head_ls_w").fill(0.0);
  p.weights.at("head_ls_b").fill(-7.0);
  const auto plans = sample_plans(p, ramp_context(6), 6, 7);
  for (const auto& s : plans)
    for (std::size_t t = 0; t < 4; ++t) {
      EXPECT_NEAR(s.trajectory.states[t].x, plans[0].trajectory.states[t].x, 0.05);
      EXPECT_NEAR(s.trajectory.states[t].y, plans[0].trajectory.states[t].y, 0.05);
    }
}

TEST(SamplePlans, ScoreEqualsTeacherForcedLikelihood) {
  const TrajModelParams p = make_traj_params(small_config(), 12);
  const auto ctx = ramp_context(6);
  for (const auto& s : sample_plans(p, ctx, 4, 99))
    EXPECT_NEAR(s.loglik, teacher_forced_loglik(p, ctx, s.trajectory).loglik, 1e-9);
}

TEST(SamplePlans, DeterministicPerSeedAndBatchIndependent) {
  const TrajModelParams p = make_traj_params(small_config(), 12);
  const auto ctx = ramp_context(6);
  const auto a = sample_plans(p, ctx, 3, 5), b = sample_plans(p, ctx, 3, 5), c = sample_plans(p, ctx, 3, 6);
  EXPECT_EQ(a[2].trajectory.states, b[2].trajectory.states);
  EXPECT_NE(a[2].trajectory.states, c[2].trajectory.states);

  std::vector<double> other(6, 0.3);
  const std::vector<double>* both[2] = {&other, &ctx};
  const std::uint64_t seeds[2] = {77, 5};
  const auto batched = sample_plans_batch(p, both, 3, seeds);
  for (std::size_t g = 0; g < 3; ++g) {
    for (std::size_t t = 0; t < 4; ++t) {
      EXPECT_NEAR(batched[1][g].trajectory.states[t].x, a[g].trajectory.states[t].x, 1e-12);
    }
  }
}

TEST(SamplePlans, ZeroCountThrows) {
  const TrajModelParams p = make_traj_params(small_config(), 1);
  EXPECT_THROW((void)sample_plans(p, ramp_context(6), 0, 1), ConfigError);
}

TEST(TopD, SelectsHighestAndNegatesMean) {
  std::vector<ScoredTrajectory> s;
  const double scores[] = {-3.0, -1.0, -2.0, -5.0};
  for (double v : scores) s.push_back({zeros(1), v});
  s[1].trajectory.states[0] = {1, 1};
  const PlanSet p = top_d_plans(s, 2);
  EXPECT_EQ(p.certainties, (std::vector{-1.0, -2.0}));
  EXPECT_EQ(p.plans[0].states[0], (Point2{1, 1}));
  EXPECT_DOUBLE_EQ(p.uncertainty, 1.5);
}

TEST(TopD, TiesKeepSampleOrderAndMaxAtLeastMedian) {
  std::vector<ScoredTrajectory> s;
  for (int i = 0; i < 4; ++i) {
    s.push_back({zeros(1), -1.0});
    s.back().trajectory.states[0].x = i;
  }
  const PlanSet p = top_d_plans(s, 3);
  EXPECT_EQ(p.plans[0].states[0].x, 0.0);
  EXPECT_EQ(p.plans[2].states[0].x, 2.0);

  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0.0, 5.0);
  std::vector<ScoredTrajectory> r;
  for (int i = 0; i < 11; ++i) r.push_back({zeros(1), n(rng)});
  const PlanSet q = top_d_plans(r, 11);
  EXPECT_GE(q.certainties.front(), q.certainties[5]);
}

TEST(TopD, Errors) {
  std::vector<ScoredTrajectory> s(3, {zeros(1), 0.0});
  EXPECT_THROW((void)top_d_plans(s, 0), ConfigError);
  EXPECT_THROW((void)top_d_plans(s, 4), ConfigError);
}

TEST(Ensemble, MeanOfMemberScores) {
  std::vector<Trajectory> pooled(3, zeros(2));
  for (int i = 0; i < 3; ++i) pooled[i].states[0].x = i;
  const std::vector<std::vector<double>> scores = {{-1.0, -5.0}, {-2.0, -2.0}, {-4.0, -0.5}};
  const PlanSet p = ensemble_aggregate(pooled, scores, 2);
  EXPECT_EQ(p.plans[0].states[0].x, 1.0);  // mean -2.0
  EXPECT_EQ(p.plans[1].states[0].x, 2.0);  // mean -2.25
  EXPECT_DOUBLE_EQ(p.uncertainty, 2.125);
}

TEST(Ensemble, SingleMemberEqualsTopD) {
  std::vector<Trajectory> pooled(4, zeros(1));
  std::vector<ScoredTrajectory> direct;
  std::vector<std::vector<double>> scores;
  const double v[] = {-0.3, -2.0, -0.1, -7.0};
  for (int i = 0; i < 4; ++i) {
    pooled[i].states[0].y = i;
    scores.push_back({v[i]});
    direct.push_back({pooled[i], v[i]});
  }
  const PlanSet a = ensemble_aggregate(pooled, scores, 2), b = top_d_plans(direct, 2);
  EXPECT_EQ(a.certainties, b.certainties);
  EXPECT_EQ(a.uncertainty, b.uncertainty);
  EXPECT_EQ(a.plans[1].states, b.plans[1].states);
}

TEST(Ensemble, Errors) {
  std::vector<Trajectory> pooled = {zeros(2), zeros(3)};
  EXPECT_THROW((void)ensemble_aggregate(pooled, {{0.0}, {0.0}}, 1), ShapeError);
  EXPECT_THROW((void)ensemble_aggregate(pooled, {{0.0}}, 1), ShapeError);
  std::vector<Trajectory> same = {zeros(2), zeros(2)};
  EXPECT_THROW((void)ensemble_aggregate(same, {{0.0}, {}}, 1), ConfigError);
}
