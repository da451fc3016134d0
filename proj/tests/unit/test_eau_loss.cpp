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

#include "eauc/eau_loss.hpp"

using namespace eauc;

namespace {

double tanh_ref(double x) {
  const double e = std::exp(2.0 * x);
  return (e - 1.0) / (e + 1.0);
}

struct Soft {
  double lc, lu, hc, hu;
};

Soft soft_values(const std::vector<double>& ade, const std::vector<double>& c, const EaucConfig& cfg) {
  ad::Tape tape;
  const SoftCounts s = soft_counts(tape.constant(Tensor::column(ade)), tape.constant(Tensor::column(c)), cfg);
  return {s.lc.item(), s.lu.item(), s.hc.item(), s.hu.item()};
}

double loss_value(const std::vector<double>& ade, const std::vector<double>& c, const EaucConfig& cfg) {
  ad::Tape tape;
  const SoftCounts s = soft_counts(tape.constant(Tensor::column(ade)), tape.constant(Tensor::column(c)), cfg);
  return eauc_loss(s, cfg).item();
}

}  // namespace

TEST(EaucConfig, DefaultsAndValidation) {
  EaucConfig cfg;
  EXPECT_EQ(cfg.beta, 200.0);
  EXPECT_EQ(cfg.ade_th, 0.8);
  EXPECT_EQ(cfg.c_th, 0.6);
  EXPECT_EQ(cfg.gamma, 3.0);
  EXPECT_EQ(cfg.ade_scale, 0.5);
  EXPECT_EQ(cfg.c_clip_lo, 0.0);
  EXPECT_EQ(cfg.c_clip_hi, 100.0);
  EXPECT_NO_THROW(cfg.validate());
  EaucConfig bad = cfg;
  bad.gamma = 0.5;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = cfg;
  bad.c_th = 1.0;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = cfg;
  bad.c_clip_lo = 100.0;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = cfg;
  bad.ade_th = 0.0;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = cfg;
  bad.beta = -1.0;
  EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(PostprocessCertainty, ClipAndNormalize) {
  EaucConfig cfg;
  EXPECT_EQ(postprocess_certainty(120.0, cfg), 1.0);
  EXPECT_EQ(postprocess_certainty(-5.0, cfg), 0.0);
  EXPECT_EQ(postprocess_certainty(50.0, cfg), 0.5);
}

TEST(PostprocessCertainty, GradientInsideAndOutsideClip) {
  EaucConfig cfg;
  ad::Tape tape;
  ad::Var x = tape.leaf(Tensor::column({-5.0, 50.0, 120.0}));
  const Tensor g = tape.backward(ad::sum(postprocess_certainty(x, cfg))).at(x.id());
  EXPECT_EQ(g[0], 0.0);
  EXPECT_DOUBLE_EQ(g[1], 0.01);
  EXPECT_EQ(g[2], 0.0);
}

TEST(ScaleAde, Examples) {
  EaucConfig cfg;
  EXPECT_DOUBLE_EQ(scale_ade(1.6, cfg), cfg.ade_th);
  EXPECT_EQ(scale_ade(0.0, cfg), 0.0);
  EXPECT_DOUBLE_EQ(scale_ade(3.0, cfg), 1.5);
  EXPECT_THROW((void)scale_ade(-1.0, cfg), DomainError);
}

TEST(Categorize, Examples) {
  EaucConfig cfg;
  EXPECT_EQ(categorize(0.4, 0.9, cfg), Category::lc);
  EXPECT_EQ(categorize(0.8, 0.6, cfg), Category::lu);
  EXPECT_EQ(categorize(1.2, 0.9, cfg), Category::hc);
  EXPECT_EQ(categorize(1.2, 0.6, cfg), Category::hu);
  EXPECT_EQ(categorize(0.8, 0.61, cfg), Category::lc);
  EXPECT_EQ(categorize(0.81, 0.6, cfg), Category::hu);
}

TEST(EauMeasure, Examples) {
  EXPECT_EQ(eau_measure({2, 0, 0, 2}), 1.0);
  EXPECT_EQ(eau_measure({1, 1, 1, 1}), 0.5);
  EXPECT_EQ(eau_measure({0, 2, 2, 0}), 0.0);
  EXPECT_THROW((void)eau_measure({0, 0, 0, 0}), DomainError);
}

TEST(EauMeasure, BoundedAndOneIffAligned) {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> k(0, 5);
  for (int i = 0; i < 500; ++i) {
    CategoryCounts n{double(k(rng)), double(k(rng)), double(k(rng)), double(k(rng))};
    if (n.total() == 0) continue;
    const double m = eau_measure(n);
    EXPECT_GE(m, 0.0);
    EXPECT_LE(m, 1.0);
    EXPECT_EQ(m == 1.0, n.lu == 0 && n.hc == 0);
  }
}

TEST(SoftCounts, Examples) {
  EaucConfig cfg;
  const Soft a = soft_values({0.0}, {1.0}, cfg);
  EXPECT_EQ(a.lc, 1.0);
  EXPECT_EQ(a.lu + a.hc + a.hu, 0.0);

  const Soft b = soft_values({2.0}, {0.1}, cfg);
  EXPECT_NEAR(b.hu, tanh_ref(2.0) * 0.9, 1e-12);
  EXPECT_NEAR(b.hu, 0.8676248, 1e-6);
  EXPECT_EQ(b.lc + b.lu + b.hc, 0.0);

  const Soft c = soft_values({0.5}, {0.5}, cfg);
  EXPECT_NEAR(c.lu, (1.0 - tanh_ref(0.5)) * 0.5, 1e-12);
  EXPECT_NEAR(c.lu, 0.2689414, 1e-6);
}

TEST(SoftCounts, EmptyBatchAndShapeErrors) {
  EaucConfig cfg;
  ad::Tape tape;
  EXPECT_THROW((void)soft_counts(tape.constant(Tensor({0, 1})), tape.constant(Tensor({0, 1})), cfg), DomainError);
  EXPECT_THROW((void)soft_counts(tape.constant(Tensor({2, 1})), tape.constant(Tensor({3, 1})), cfg), ShapeError);
}

TEST(SoftCounts, MassesBoundedByMaskSizes) {
  EaucConfig cfg;
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> ua(0.0, 2.5), uc(0.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> a(16), c(16);
    for (int i = 0; i < 16; ++i) {
      a[i] = ua(rng);
      c[i] = uc(rng);
    }
    const Soft s = soft_values(a, c, cfg);
    const CategoryCounts h = hard_counts(a, c, cfg);
    for (auto [mass, count] : {std::pair{s.lc, h.lc}, {s.lu, h.lu}, {s.hc, h.hc}, {s.hu, h.hu}}) {
      EXPECT_GE(mass, 0.0);
      EXPECT_LE(mass, count);
    }
  }
}

TEST(SoftCounts, HardSoftConsistencyAwayFromThresholds) {
  EaucConfig cfg;
  std::mt19937_64 rng(5);
  // Values at least 0.3 from each threshold, certainty strictly inside (0, 1).
  const std::vector<double> ades = {0.1, 0.3, 0.45, 1.2, 1.6, 2.2};
  const std::vector<double> certs = {0.05, 0.15, 0.25, 0.95};
  std::uniform_int_distribution<std::size_t> pa(0, ades.size() - 1), pc(0, certs.size() - 1);
  std::uniform_int_distribution<int> len(1, 8);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> a, c;
    for (int i = 0, n = len(rng); i < n; ++i) {
      a.push_back(ades[pa(rng)]);
      c.push_back(certs[pc(rng)]);
    }
    const Soft s = soft_values(a, c, cfg);
    const CategoryCounts h = hard_counts(a, c, cfg);
    EXPECT_EQ(s.lc > 0, h.lc > 0);
    EXPECT_EQ(s.lu > 0, h.lu > 0);
    EXPECT_EQ(s.hc > 0, h.hc > 0);
    EXPECT_EQ(s.hu > 0, h.hu > 0);
  }
}

TEST(SoftCounts, GradientFlowsOnlyThroughSmoothFactors) {
  EaucConfig cfg;
  ad::Tape tape;
  ad::Var a = tape.leaf(Tensor::column({0.5}));
  ad::Var c = tape.leaf(Tensor::column({0.3}));
  const SoftCounts s = soft_counts(a, c, cfg);  // LU sample
  const ad::Gradients g = tape.backward(s.lu);
  const double t = tanh_ref(0.5);
  EXPECT_NEAR(g.at(a.id()).item(), -(1.0 - t * t) * 0.7, 1e-12);
  EXPECT_NEAR(g.at(c.id()).item(), -(1.0 - t), 1e-12);
}

TEST(EaucLoss, Examples) {
  EaucConfig cfg;
  cfg.gamma = 1.0;
  EXPECT_NEAR(eauc_loss_value({2.0, 0.0, 0.0, 3.0}, cfg), 0.0, 1e-12);
  EXPECT_NEAR(eauc_loss_value({1, 1, 1, 1}, cfg), -std::log(2.0 / 4.0), 1e-6);
  EXPECT_NEAR(eauc_loss_value({1, 1, 1, 1}, cfg), 0.6931472, 1e-6);
  cfg.gamma = 3.0;
  EXPECT_NEAR(eauc_loss_value({1, 1, 1, 1}, cfg), -std::log(4.0 / 6.0), 1e-6);
  EXPECT_NEAR(eauc_loss_value({1, 1, 1, 1}, cfg), 0.4054651, 1e-6);
}

TEST(EaucLoss, GraphMatchesScalarForm) {
  EaucConfig cfg;
  for (double gamma : {1.0, 3.0}) {
    cfg.gamma = gamma;
    ad::Tape tape;
    SoftCounts s{tape.constant(1.0), tape.constant(1.0), tape.constant(1.0), tape.constant(1.0)};
    EXPECT_NEAR(eauc_loss(s, cfg).item(), eauc_loss_value({1, 1, 1, 1}, cfg), 1e-15);
  }
}

TEST(EaucLoss, PerfectAlignmentIsZeroForAnyGamma) {
  EaucConfig cfg;
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> low(0.0, 0.7), high(0.9, 3.0), cert(0.65, 1.0), unc(0.0, 0.55);
  for (double gamma : {1.0, 2.0, 3.0, 10.0}) {
    cfg.gamma = gamma;
    for (int trial = 0; trial < 20; ++trial) {
      std::vector<double> a, c;
      for (int i = 0; i < 10; ++i) {
        const bool accurate = rng() % 2;
        a.push_back(accurate ? low(rng) : high(rng));
        c.push_back(accurate ? cert(rng) : unc(rng));
      }
      EXPECT_LT(loss_value(a, c, cfg), 1e-6) << "gamma " << gamma;
    }
  }
}

TEST(EaucLoss, NonNegative) {
  EaucConfig cfg;
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> ua(0.0, 3.0), uc(0.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> a(8), c(8);
    for (int i = 0; i < 8; ++i) {
      a[i] = ua(rng);
      c[i] = uc(rng);
    }
    EXPECT_GE(loss_value(a, c, cfg), -1e-12);
  }
}

TEST(EaucLoss, LoweringCertaintyOfHighErrorCertainSampleLowersLoss) {
  EaucConfig cfg;
  const std::vector<double> a = {0.3, 0.5, 1.4, 1.1};
  std::vector<double> c = {0.9, 0.4, 0.95, 0.2};  // sample 2 is HC
  double prev = loss_value(a, c, cfg);
  for (double v : {0.9, 0.85, 0.8, 0.7, 0.65}) {
    c[2] = v;
    const double cur = loss_value(a, c, cfg);
    EXPECT_LT(cur, prev) << "c=" << v;
    prev = cur;
  }
}

TEST(EaucLoss, GradientWrtCertaintiesMatchesFiniteDifferences) {
  EaucConfig cfg;
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> ua(0.05, 2.0), uc(0.05, 0.95);
  for (int trial = 0; trial < 10; ++trial) {
    Tensor a({6, 1}), c({6, 1});
    for (std::size_t i = 0; i < 6; ++i) {
      a[i] = ua(rng);
      c[i] = uc(rng);
      // Keep finite-difference probes on one side of the thresholds.
      if (std::abs(a[i] - cfg.ade_th) < 0.01) a[i] += 0.05;
      if (std::abs(c[i] - cfg.c_th) < 0.01) c[i] += 0.05;
    }
    const double err = ad::grad_check(
        [&](ad::Tape& t, ad::Var cv) { return eauc_loss(soft_counts(t.constant(a), cv, cfg), cfg); }, c, 1e-5);
    EXPECT_LT(err, 1e-4) << "trial " << trial;
  }
}

TEST(EaucLoss, GammaOnlyMattersWithAccurateCertainMass) {
  EaucConfig g1, g3;
  g1.gamma = 1.0;
  g3.gamma = 3.0;
  EXPECT_EQ(eauc_loss_value({0, 1, 2, 1}, g1), eauc_loss_value({0, 1, 2, 1}, g3));
  EXPECT_NE(eauc_loss_value({0.5, 1, 2, 1}, g1), eauc_loss_value({0.5, 1, 2, 1}, g3));
}

TEST(TotalLoss, Examples) {
  EaucConfig cfg;
  ad::Tape tape;
  EXPECT_DOUBLE_EQ(total_loss(tape.constant(1.0), tape.constant(0.5), cfg).item(), 101.0);
  EXPECT_DOUBLE_EQ(total_loss(tape.constant(1.0), tape.constant(0.0), cfg).item(), 1.0);
  cfg.beta = 0.0;
  EXPECT_DOUBLE_EQ(total_loss(tape.constant(1.7), tape.constant(0.5), cfg).item(), 1.7);
  EXPECT_THROW((void)total_loss(tape.constant(Tensor({2, 1})), tape.constant(0.5), cfg), ShapeError);
}
