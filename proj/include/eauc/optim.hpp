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

// Optimizers and learning-rate schedule.
//
// AdamW (decoupled weight decay), with step count k starting at 1:
//   w <- w - lr * wd * w
//   m <- b1 * m + (1 - b1) * g
//   v <- b2 * v + (1 - b2) * g^2
//   w <- w - lr * (m / (1 - b1^k)) / (sqrt(v / (1 - b2^k)) + eps)
//
// SGD with momentum mu and L2 weight decay:
//   u <- mu * u + g + wd * w
//   w <- w - lr * u
//
// Cosine schedule with linear warmup over W steps out of N:
//   lr(k) = lr_max * k / W                                 for k <= W
//   lr(k) = lr_max * 0.5 * (1 + cos(pi * (k - W) / (N - W)))  otherwise

#pragma once

#include <cassert>
#include <cmath>
#include <numbers>
#include <vector>

#include "eauc/error.hpp"
#include "eauc/params.hpp"
#include "eauc/tensor.hpp"

namespace eauc {

inline double cosine_warmup_lr(double lr_max, std::size_t step, std::size_t warmup_steps, std::size_t total_steps) {
  if (warmup_steps > 0 && step <= warmup_steps) {
    return lr_max * static_cast<double>(step) / static_cast<double>(warmup_steps);
  }
  if (total_steps <= warmup_steps) return lr_max;
  const double progress =
      static_cast<double>(step - warmup_steps) / static_cast<double>(total_steps - warmup_steps);
  return lr_max * 0.5 * (1.0 + std::cos(std::numbers::pi * std::min(progress, 1.0)));
}

inline double global_norm(const std::vector<Tensor>& grads) {
  double sq = 0.0;
  for (const Tensor& g : grads)
    for (double v : g.values()) sq += v * v;
  return std::sqrt(sq);
}

/// Rescales grads so their global L2 norm is at most max_norm. Returns the
/// norm before clipping.
inline double clip_grad_norm(std::vector<Tensor>& grads, double max_norm) {
  const double norm = global_norm(grads);
  if (max_norm > 0.0 && norm > max_norm) {
    const double k = max_norm / (norm + 1e-12);
    for (Tensor& g : grads)
      for (double& v : g.values()) v *= k;
  }
  assert(max_norm <= 0.0 || global_norm(grads) <= max_norm * (1.0 + 1e-9));
  return norm;
}

class AdamW {
 public:
  AdamW(double weight_decay, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : wd_(weight_decay), b1_(beta1), b2_(beta2), eps_(eps) {}

  void step(ParamStore& params, const std::vector<Tensor>& grads, double lr) {
    auto& entries = params.entries();
    if (grads.size() != entries.size()) throw ShapeError("adamw: gradient count does not match parameters");
    if (m_.empty()) {
      for (const auto& [_, t] : entries) {
        m_.emplace_back(t.shape());
        v_.emplace_back(t.shape());
      }
    }
    ++k_;
    const double c1 = 1.0 - std::pow(b1_, static_cast<double>(k_));
    const double c2 = 1.0 - std::pow(b2_, static_cast<double>(k_));
    for (std::size_t i = 0; i < entries.size(); ++i) {
      Tensor& w = entries[i].second;
      const Tensor& g = grads[i];
      for (std::size_t j = 0; j < w.size(); ++j) {
        w[j] -= lr * wd_ * w[j];
        m_[i][j] = b1_ * m_[i][j] + (1.0 - b1_) * g[j];
        v_[i][j] = b2_ * v_[i][j] + (1.0 - b2_) * g[j] * g[j];
        w[j] -= lr * (m_[i][j] / c1) / (std::sqrt(v_[i][j] / c2) + eps_);
      }
    }
  }

 private:
  double wd_, b1_, b2_, eps_;
  std::size_t k_ = 0;
  std::vector<Tensor> m_, v_;
};

class Sgd {
 public:
  Sgd(double momentum, double weight_decay) : mu_(momentum), wd_(weight_decay) {}

  void step(ParamStore& params, const std::vector<Tensor>& grads, double lr) {
    auto& entries = params.entries();
    if (grads.size() != entries.size()) throw ShapeError("sgd: gradient count does not match parameters");
    if (u_.empty())
      for (const auto& [_, t] : entries) u_.emplace_back(t.shape());
    for (std::size_t i = 0; i < entries.size(); ++i) {
      Tensor& w = entries[i].second;
      for (std::size_t j = 0; j < w.size(); ++j) {
        u_[i][j] = mu_ * u_[i][j] + grads[i][j] + wd_ * w[j];
        w[j] -= lr * u_[i][j];
      }
    }
  }

 private:
  double mu_, wd_;
  std::vector<Tensor> u_;
};

}  // namespace eauc
