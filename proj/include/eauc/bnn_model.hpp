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

// Monte-Carlo dropout regression network: two ReLU hidden layers, each
// followed by inverted dropout, and a scalar output. Observation noise is a
// single trainable log standard deviation. The predictive variance of an
// input is the population variance of S stochastic passes plus the
// observation noise variance.
//
// The network works in standardized target units; mc_predict maps back to
// the original units with target_mean / target_std.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "eauc/autodiff.hpp"
#include "eauc/error.hpp"
#include "eauc/params.hpp"
#include "eauc/tensor.hpp"

namespace eauc {

struct BnnConfig {
  std::size_t input_dim = 13;
  std::size_t hidden = 100;
  double dropout = 0.5;
  double init_noise_std = 0.5;

  void validate() const {
    if (input_dim == 0 || hidden == 0) throw ConfigError("bnn: input_dim and hidden must be positive");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("bnn: dropout must lie in [0, 1)");
    if (!(init_noise_std > 0.0)) throw ConfigError("bnn: observation noise must be > 0");
  }
};

struct BnnParams {
  BnnConfig config;
  ParamStore weights;
  double target_mean = 0.0;
  double target_std = 1.0;

  double noise_std() const { return std::exp(weights.at("log_noise")[0]); }
};

struct GaussianPrediction {
  double mean = 0.0;
  double variance = 1.0;
};

inline BnnParams make_bnn_params(const BnnConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(mix_seed(seed, 0xb0));
  const std::size_t d = cfg.input_dim, h = cfg.hidden;
  BnnParams p{cfg, {}, 0.0, 1.0};
  p.weights.add("w1", glorot({d, h}, rng));
  p.weights.add("b1", Tensor({1, h}));
  p.weights.add("w2", glorot({h, h}, rng));
  p.weights.add("b2", Tensor({1, h}));
  p.weights.add("w3", glorot({h, 1}, rng));
  p.weights.add("b3", Tensor({1, 1}));
  p.weights.add("log_noise", Tensor::scalar(std::log(cfg.init_noise_std)));
  return p;
}

inline void validate_bnn_params(const BnnParams& p) {
  p.config.validate();
  const std::size_t d = p.config.input_dim, h = p.config.hidden;
  auto expect = [&](const char* name, Shape s) {
    if (p.weights.at(name).shape() != s) {
      throw ShapeError(std::string("bnn params: '") + name + "' has shape " + p.weights.at(name).shape().str() +
                       ", expected " + s.str());
    }
  };
  expect("w1", {d, h});
  expect("b1", {1, h});
  expect("w2", {h, h});
  expect("b2", {1, h});
  expect("w3", {h, 1});
  expect("b3", {1, 1});
  expect("log_noise", {1, 1});
  if (!p.weights.all_finite()) throw DomainError("bnn params: non-finite weight");
  if (!(p.target_std > 0.0)) throw DomainError("bnn params: target_std must be > 0");
}

namespace bnn {

inline Tensor dropout_mask(Shape shape, double p, std::mt19937_64& rng) {
  Tensor m(shape, 1.0);
  if (p == 0.0) return m;
  std::bernoulli_distribution keep(1.0 - p);
  const double scale = 1.0 / (1.0 - p);
  for (double& v : m.values()) v = keep(rng) ? scale : 0.0;
  return m;
}

/// One stochastic pass. x: B x input_dim; returns B x 1.
inline ad::Var forward(const BoundParams& p, const BnnConfig& cfg, ad::Var x, std::mt19937_64& rng) {
  ad::Tape& tape = x.tape();
  const std::size_t b = x.shape().rows;
  ad::Var h1 = ad::relu(ad::add_bias(ad::matmul(x, p["w1"]), p["b1"]));
  h1 = h1 * tape.constant(dropout_mask({b, cfg.hidden}, cfg.dropout, rng));
  ad::Var h2 = ad::relu(ad::add_bias(ad::matmul(h1, p["w2"]), p["b2"]));
  h2 = h2 * tape.constant(dropout_mask({b, cfg.hidden}, cfg.dropout, rng));
  return ad::add_bias(ad::matmul(h2, p["w3"]), p["b3"]);
}

struct McGraph {
  std::vector<ad::Var> passes;  // S x (B x 1)
  ad::Var mean;                 // B x 1
  ad::Var spread;               // B x 1, population variance of passes
  ad::Var noise_var;            // 1 x 1
  ad::Var variance;             // B x 1, spread + noise_var
};

inline McGraph mc_forward(const BoundParams& p, const BnnConfig& cfg, ad::Var x, std::size_t samples,
                          std::mt19937_64& rng) {
  if (samples == 0) throw ConfigError("mc_predict: S must be at least 1");
  McGraph g;
  ad::Var total;
  for (std::size_t s = 0; s < samples; ++s) {
    g.passes.push_back(forward(p, cfg, x, rng));
    total = s == 0 ? g.passes.back() : total + g.passes.back();
  }
  const double inv = 1.0 / static_cast<double>(samples);
  g.mean = inv * total;
  ad::Var sq;
  for (std::size_t s = 0; s < samples; ++s) {
    ad::Var d = g.passes[s] - g.mean;
    sq = s == 0 ? d * d : sq + d * d;
  }
  g.spread = inv * sq;
  g.noise_var = ad::exp(2.0 * p["log_noise"]);
  // Broadcast the 1 x 1 noise variance over the batch.
  g.variance = ad::add_bias(g.spread, g.noise_var);
  return g;
}

/// Row-wise Gaussian NLL: 0.5*log(2*pi*var) + (y - mean)^2 / (2*var).
inline ad::Var gaussian_nll_rows(ad::Var mean, ad::Var variance, ad::Var targets) {
  ad::Var r = targets - mean;
  return 0.5 * ad::log((2.0 * std::numbers::pi) * variance) + 0.5 * (r * r) * ad::exp(-ad::log(variance));
}

}  // namespace bnn

/// Predictions for every row of x (standardized features), in original
/// target units.
inline std::vector<GaussianPrediction> mc_predict_batch(const BnnParams& params, const Tensor& x, std::size_t samples,
                                                        std::uint64_t seed) {
  if (x.cols() != params.config.input_dim) {
    throw ShapeError("mc_predict: feature count " + std::to_string(x.cols()) + " does not match configured " +
                     std::to_string(params.config.input_dim));
  }
  std::mt19937_64 rng(mix_seed(seed, 0x3c));
  ad::Tape tape;
  BoundParams p(tape, params.weights);
  bnn::McGraph g = bnn::mc_forward(p, params.config, tape.constant(x), samples, rng);
  std::vector<GaussianPrediction> out(x.rows());
  const double s = params.target_std;
  for (std::size_t i = 0; i < x.rows(); ++i) {
    out[i].mean = params.target_mean + s * g.mean.value()[i];
    out[i].variance = s * s * g.variance.value()[i];
  }
  return out;
}

inline GaussianPrediction mc_predict(const BnnParams& params, std::span<const double> x, std::size_t samples,
                                     std::uint64_t seed) {
  return mc_predict_batch(params, Tensor({1, x.size()}, std::vector<double>(x.begin(), x.end())), samples, seed)[0];
}

inline double gaussian_nll(const GaussianPrediction& pred, double target) {
  if (!(pred.variance > 0.0)) throw DomainError("gaussian_nll: variance must be > 0");
  const double r = target - pred.mean;
  return 0.5 * std::log(2.0 * std::numbers::pi * pred.variance) + r * r / (2.0 * pred.variance);
}

/// Error measure and [0, 1] certainty for a regression prediction. Variance
/// is clamped to [variance_lo, variance_hi] and min-max normalized;
/// certainty is one minus that.
struct RegressionCalibration {
  double variance_lo = 0.0;
  double variance_hi = 1.0;
  double error_scale = 1.0;

  void validate() const {
    if (!(variance_lo < variance_hi)) throw ConfigError("regression calibration: variance_lo must be < variance_hi");
  }
};

inline std::pair<double, double> bnn_error_and_certainty(const GaussianPrediction& pred, double target,
                                                         const RegressionCalibration& cal) {
  cal.validate();
  const double err = std::abs(pred.mean - target) * cal.error_scale;
  const double v = std::clamp(pred.variance, cal.variance_lo, cal.variance_hi);
  return {err, 1.0 - (v - cal.variance_lo) / (cal.variance_hi - cal.variance_lo)};
}

/// Graph form of bnn_error_and_certainty; all nodes B x 1.
inline std::pair<ad::Var, ad::Var> bnn_error_and_certainty(ad::Var mean, ad::Var variance, ad::Var targets,
                                                           const RegressionCalibration& cal) {
  cal.validate();
  ad::Var r = mean - targets;
  ad::Var err = cal.error_scale * ad::sqrt(r * r + 1e-12);
  ad::Var norm = (1.0 / (cal.variance_hi - cal.variance_lo)) *
                 (ad::clamp(variance, cal.variance_lo, cal.variance_hi) - cal.variance_lo);
  return {err, 1.0 - norm};
}

}  // namespace eauc
