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

#include "eauc/bnn_model.hpp"

using namespace eauc;

namespace {

BnnConfig small(double dropout) {
  BnnConfig c;
  c.input_dim = 3;
  c.hidden = 16;
  c.dropout = dropout;
  c.init_noise_std = 0.5;
  return c;
}

const std::vector<double> kInput = {0.4, -1.2, 0.9};

}  // namespace

TEST(McPredict, NoDropoutVarianceIsNoise) {
  const BnnParams p = make_bnn_params(small(0.0), 1);
  const GaussianPrediction g = mc_predict(p, kInput, 20, 5);
  EXPECT_NEAR(g.variance, 0.25, 1e-12);
}

TEST(McPredict, SinglePassVarianceIsNoise) {
  const BnnParams p = make_bnn_params(small(0.5), 1);
  EXPECT_NEAR(mc_predict(p, kInput, 1, 5).variance, 0.25, 1e-12);
}

TEST(McPredict, MeanUsesTargetScaling) {
  BnnParams p = make_bnn_params(small(0.0), 2);
  const GaussianPrediction base = mc_predict(p, kInput, 1, 1);
  p.target_mean = 10.0;
  p.target_std = 3.0;
  const GaussianPrediction scaled = mc_predict(p, kInput, 1, 1);
  EXPECT_NEAR(scaled.mean, 10.0 + 3.0 * base.mean, 1e-12);
  EXPECT_NEAR(scaled.variance, 9.0 * base.variance, 1e-12);
}

TEST(McPredict, DeterministicForSeed) {
  const BnnParams p = make_bnn_params(small(0.5), 3);
  const GaussianPrediction a = mc_predict(p, kInput, 20, 11), b = mc_predict(p, kInput, 20, 11),
                           c = mc_predict(p, kInput, 20, 12);
  EXPECT_EQ(a.mean, b.mean);
  EXPECT_EQ(a.variance, b.variance);
  EXPECT_NE(a.variance, c.variance);
}

TEST(McPredict, SpreadIsPopulationVarianceOfPasses) {
  const BnnConfig cfg = small(0.3);
  const BnnParams params = make_bnn_params(cfg, 4);
  ad::Tape tape;
  BoundParams p(tape, params.weights);
  std::mt19937_64 rng(9);
  const bnn::McGraph g = bnn::mc_forward(p, cfg, tape.constant(Tensor({1, 3}, kInput)), 7, rng);
  double mean = 0.0, sq = 0.0;
  for (const auto& v : g.passes) mean += v.value()[0] / 7.0;
  for (const auto& v : g.passes) sq += (v.value()[0] - mean) * (v.value()[0] - mean) / 7.0;
  EXPECT_NEAR(g.mean.value()[0], mean, 1e-12);
  EXPECT_NEAR(g.spread.value()[0], sq, 1e-12);
  EXPECT_NEAR(g.variance.value()[0], sq + 0.25, 1e-12);
}

TEST(McPredict, HigherDropoutWidensSpread) {
  const BnnParams lo = make_bnn_params(small(0.1), 5);
  BnnParams hi = lo;
  hi.config.dropout = 0.5;
  int wider = 0;
  const int trials = 120;
  for (int s = 0; s < trials; ++s) wider += mc_predict(hi, kInput, 20, s).variance > mc_predict(lo, kInput, 20, s).variance;
  EXPECT_GE(wider, trials * 9 / 10);
}

TEST(McPredict, Errors) {
  const BnnParams p = make_bnn_params(small(0.5), 1);
  EXPECT_THROW((void)mc_predict(p, std::vector<double>{1.0, 2.0}, 5, 1), ShapeError);
  EXPECT_THROW((void)mc_predict(p, kInput, 0, 1), ConfigError);
  BnnConfig bad = small(1.0);
  EXPECT_THROW((void)make_bnn_params(bad, 1), ConfigError);
}

TEST(GaussianNll, Examples) {
  EXPECT_NEAR(gaussian_nll({0.0, 1.0}, 0.0), 0.9189385, 1e-7);
  EXPECT_NEAR(gaussian_nll({0.0, 1.0}, std::sqrt(2.0)), 0.9189385 + 1.0, 1e-7);
  EXPECT_NEAR(gaussian_nll({1.0, 1.0}, -1.0), 0.9189385 + 2.0, 1e-7);
  EXPECT_THROW((void)gaussian_nll({0.0, 0.0}, 0.0), DomainError);
  EXPECT_THROW((void)gaussian_nll({0.0, -1.0}, 0.0), DomainError);
}

TEST(GaussianNll, GraphFormMatchesScalar) {
  ad::Tape tape;
  ad::Var m = tape.constant(Tensor({2, 1}, {0.5, -1.0}));
  ad::Var v = tape.constant(Tensor({2, 1}, {2.0, 0.3}));
  ad::Var y = tape.constant(Tensor({2, 1}, {1.5, 0.0}));
  const Tensor& nll = bnn::gaussian_nll_rows(m, v, y).value();
  EXPECT_NEAR(nll[0], gaussian_nll({0.5, 2.0}, 1.5), 1e-12);
  EXPECT_NEAR(nll[1], gaussian_nll({-1.0, 0.3}, 0.0), 1e-12);
}

TEST(GaussianNll, WeightGradientMatchesFiniteDifference) {
  const BnnConfig cfg = small(0.5);
  BnnParams params = make_bnn_params(cfg, 8);
  const Tensor x({4, 3}, {0.1, 0.2, -0.3, 1.0, -1.0, 0.5, 0.0, 0.7, 0.7, -0.4, 0.2, 0.9});
  const Tensor y({4, 1}, {0.3, -0.2, 1.1, 0.0});
  auto loss = [&](ad::Tape& tape, const BoundParams& p) {
    std::mt19937_64 rng(21);  // identical masks on every evaluation
    bnn::McGraph g = bnn::mc_forward(p, cfg, tape.constant(x), 3, rng);
    return ad::mean(bnn::gaussian_nll_rows(g.mean, g.variance, tape.constant(y)));
  };
  ad::Tape tape;
  BoundParams bound(tape, params.weights);
  const std::vector<Tensor> grads = bound.gradients(tape.backward(loss(tape, bound)));
  auto value = [&] {
    ad::Tape t;
    BoundParams b(t, params.weights);
    return loss(t, b).value()[0];
  };
  const double h = 1e-6;
  std::size_t k = 0;
  for (auto& [name, t] : params.weights.entries()) {
    for (std::size_t i = 0; i < t.size(); i += 5) {
      const double saved = t[i];
      t[i] = saved + h;
      const double up = value();
      t[i] = saved - h;
      const double down = value();
      t[i] = saved;
      const double fd = (up - down) / (2 * h);
      EXPECT_NEAR(grads[k][i], fd, 1e-6 + 1e-4 * std::abs(fd)) << name << "[" << i << "]";
    }
    ++k;
  }
}

TEST(Certainty, EndpointsAndMonotone) {
  const RegressionCalibration cal{1.0, 3.0, 0.5};
  EXPECT_EQ(bnn_error_and_certainty({0.0, 0.5}, 2.0, cal).second, 1.0);
  EXPECT_EQ(bnn_error_and_certainty({0.0, 1.0}, 2.0, cal).second, 1.0);
  EXPECT_EQ(bnn_error_and_certainty({0.0, 3.0}, 2.0, cal).second, 0.0);
  EXPECT_EQ(bnn_error_and_certainty({0.0, 9.0}, 2.0, cal).second, 0.0);
  EXPECT_DOUBLE_EQ(bnn_error_and_certainty({0.0, 2.0}, 2.0, cal).second, 0.5);
  EXPECT_DOUBLE_EQ(bnn_error_and_certainty({0.0, 2.0}, -2.0, cal).first, 1.0);
  double prev = 2.0;
  for (double v = 0.5; v < 4.0; v += 0.1) {
    const double c = bnn_error_and_certainty({0.0, v}, 0.0, cal).second;
    EXPECT_LE(c, prev);
    prev = c;
  }
}

TEST(Certainty, GraphFormMatchesScalar) {
  const RegressionCalibration cal{0.2, 1.4, 2.0};
  ad::Tape tape;
  ad::Var m = tape.constant(Tensor({3, 1}, {0.0, 1.0, -1.0}));
  ad::Var v = tape.constant(Tensor({3, 1}, {0.1, 0.8, 2.0}));
  ad::Var y = tape.constant(Tensor({3, 1}, {0.5, 1.0, 0.0}));
  const auto [err, cert] = bnn_error_and_certainty(m, v, y, cal);
  const double mv[] = {0.0, 1.0, -1.0}, vv[] = {0.1, 0.8, 2.0}, yv[] = {0.5, 1.0, 0.0};
  for (int i = 0; i < 3; ++i) {
    const auto [e, c] = bnn_error_and_certainty({mv[i], vv[i]}, yv[i], cal);
    EXPECT_NEAR(err.value()[i], e, 1e-5);
    EXPECT_NEAR(cert.value()[i], c, 1e-12);
  }
}

TEST(Certainty, InvalidBoundsThrow) {
  EXPECT_THROW((void)bnn_error_and_certainty({0.0, 1.0}, 0.0, RegressionCalibration{2.0, 2.0, 1.0}), ConfigError);
  EXPECT_THROW((void)bnn_error_and_certainty({0.0, 1.0}, 0.0, RegressionCalibration{3.0, 2.0, 1.0}), ConfigError);
}

TEST(BnnParams, Validation) {
  BnnParams p = make_bnn_params(small(0.5), 1);
  EXPECT_NO_THROW(validate_bnn_params(p));
  p.target_std = 0.0;
  EXPECT_THROW(validate_bnn_params(p), DomainError);
  p.target_std = 1.0;
  p.weights.at("w3") = Tensor({2, 1});
  EXPECT_THROW(validate_bnn_params(p), ShapeError);
}
