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

// Error-aligned uncertainty calibration.
//
// Samples are split four ways by a scaled error threshold and a normalized
// certainty threshold:
//
//                 certain (c > c_th)   uncertain (c <= c_th)
//   low error           LC                    LU             (ade <= ade_th)
//   high error          HC                    HU             (ade >  ade_th)
//
// The EaU measure is the fraction of samples in LC or HU. The trainable loss
// replaces the indicator counts with soft masses
//
//   LC: (1 - tanh(ade)) * c        LU: (1 - tanh(ade)) * (1 - c)
//   HC: tanh(ade) * c              HU: tanh(ade) * (1 - c)
//
// summed over the samples of each class, and returns
//
//   -log((gamma*n_LC + n_HU + eps) / (gamma*n_LC + n_LU + n_HC + n_HU + eps)).
//
// Class membership is decided on the values with gradients blocked; only
// the tanh(ade) and c factors carry gradient.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <span>
#include <string>
#include <string_view>

#include "eauc/autodiff.hpp"
#include "eauc/error.hpp"
#include "eauc/tensor.hpp"

namespace eauc {

struct EaucConfig {
  double ade_th = 0.8;
  double c_th = 0.6;
  double beta = 200.0;
  double gamma = 3.0;
  double epsilon = 1e-8;
  double ade_scale = 0.5;
  double c_clip_lo = 0.0;
  double c_clip_hi = 100.0;

  void validate() const {
    if (!(ade_th > 0.0)) throw ConfigError("eauc: ade_th must be > 0");
    if (!(c_th > 0.0 && c_th < 1.0)) throw ConfigError("eauc: c_th must lie in (0, 1)");
    if (!(beta >= 0.0)) throw ConfigError("eauc: beta must be >= 0");
    if (!(gamma >= 1.0)) throw ConfigError("eauc: gamma must be >= 1");
    if (!(epsilon >= 0.0)) throw ConfigError("eauc: epsilon must be >= 0");
    if (!(ade_scale > 0.0)) throw ConfigError("eauc: ade_scale must be > 0");
    if (!(c_clip_lo < c_clip_hi)) throw ConfigError("eauc: c_clip_lo must be < c_clip_hi");
  }
};

enum class Category { lc, lu, hc, hu };

inline std::string_view category_name(Category c) {
  switch (c) {
    case Category::lc: return "LC";
    case Category::lu: return "LU";
    case Category::hc: return "HC";
    case Category::hu: return "HU";
  }
  return "?";
}

struct SampleAssessment {
  double ade = 0.0;
  double certainty = 0.0;
  Category category = Category::lu;
};

struct CategoryCounts {
  double lc = 0.0;
  double lu = 0.0;
  double hc = 0.0;
  double hu = 0.0;

  double total() const { return lc + lu + hc + hu; }
};

/// Soft class masses as scalar graph nodes.
struct SoftCounts {
  ad::Var lc, lu, hc, hu;

  CategoryCounts values() const { return {lc.item(), lu.item(), hc.item(), hu.item()}; }
};

/// Clip a raw log-likelihood to [c_clip_lo, c_clip_hi] and map it to [0, 1].
inline double postprocess_certainty(double loglik, const EaucConfig& cfg) {
  return (std::clamp(loglik, cfg.c_clip_lo, cfg.c_clip_hi) - cfg.c_clip_lo) / (cfg.c_clip_hi - cfg.c_clip_lo);
}

inline ad::Var postprocess_certainty(ad::Var loglik, const EaucConfig& cfg) {
  const double span = cfg.c_clip_hi - cfg.c_clip_lo;
  return (1.0 / span) * (ad::clamp(loglik, cfg.c_clip_lo, cfg.c_clip_hi) - cfg.c_clip_lo);
}

inline double scale_ade(double raw_ade, const EaucConfig& cfg) {
  if (!(raw_ade >= 0.0)) throw DomainError("scale_ade: negative error " + std::to_string(raw_ade));
  return raw_ade * cfg.ade_scale;
}

inline ad::Var scale_ade(ad::Var raw_ade, const EaucConfig& cfg) { return cfg.ade_scale * raw_ade; }

inline Category categorize(double ade, double certainty, const EaucConfig& cfg) {
  const bool low_error = ade <= cfg.ade_th;
  const bool certain = certainty > cfg.c_th;
  if (low_error) return certain ? Category::lc : Category::lu;
  return certain ? Category::hc : Category::hu;
}

inline SampleAssessment assess(double ade, double certainty, const EaucConfig& cfg) {
  return {ade, certainty, categorize(ade, certainty, cfg)};
}

inline CategoryCounts hard_counts(std::span<const double> ade, std::span<const double> certainty,
                                  const EaucConfig& cfg) {
  if (ade.size() != certainty.size()) throw ShapeError("hard_counts: ade and certainty lengths differ");
  CategoryCounts n;
  for (std::size_t i = 0; i < ade.size(); ++i) {
    switch (categorize(ade[i], certainty[i], cfg)) {
      case Category::lc: n.lc += 1; break;
      case Category::lu: n.lu += 1; break;
      case Category::hc: n.hc += 1; break;
      case Category::hu: n.hu += 1; break;
    }
  }
  return n;
}

/// (n_LC + n_HU) / total.
inline double eau_measure(const CategoryCounts& n) {
  if (n.lc < 0 || n.lu < 0 || n.hc < 0 || n.hu < 0) throw DomainError("eau_measure: negative count");
  const double total = n.total();
  if (!(total > 0.0)) throw DomainError("eau_measure: empty batch");
  return (n.lc + n.hu) / total;
}

/// Soft masses for a batch. `ade` holds scaled errors and `certainty`
/// normalized certainties, both B x 1 nodes on the same tape.
inline SoftCounts soft_counts(ad::Var ade, ad::Var certainty, const EaucConfig& cfg) {
  if (ade.shape() != certainty.shape()) {
    throw ShapeError("soft_counts: shape mismatch " + ade.shape().str() + " vs " + certainty.shape().str());
  }
  const std::size_t n = ade.shape().size();
  if (n == 0) throw DomainError("soft_counts: empty batch");
  ad::Tape& tape = ade.tape();

  const Tensor& a = ad::stop_gradient(ade).value();
  const Tensor& c = ad::stop_gradient(certainty).value();
  std::array<Tensor, 4> masks;
  masks.fill(Tensor(ade.shape()));
  for (std::size_t i = 0; i < n; ++i) masks[static_cast<std::size_t>(categorize(a[i], c[i], cfg))][i] = 1.0;

  ad::Var err = ad::tanh(ade);
  ad::Var acc = 1.0 - err;
  ad::Var unc = 1.0 - certainty;
  auto mass = [&](Category k, ad::Var factor) {
    return ad::sum(tape.constant(masks[static_cast<std::size_t>(k)]) * factor);
  };
  return SoftCounts{
      mass(Category::lc, acc * certainty),
      mass(Category::lu, acc * unc),
      mass(Category::hc, err * certainty),
      mass(Category::hu, err * unc),
  };
}

inline ad::Var eauc_loss(const SoftCounts& n, const EaucConfig& cfg) {
  ad::Var weighted_lc = cfg.gamma * n.lc;
  ad::Var aligned = weighted_lc + n.hu;
  ad::Var total = aligned + n.lu + n.hc;
  return ad::log(total + cfg.epsilon) - ad::log(aligned + cfg.epsilon);
}

/// Scalar-only evaluation of the loss for given class masses.
inline double eauc_loss_value(const CategoryCounts& n, const EaucConfig& cfg) {
  const double aligned = cfg.gamma * n.lc + n.hu;
  return std::log(aligned + n.lu + n.hc + cfg.epsilon) - std::log(aligned + cfg.epsilon);
}

inline ad::Var total_loss(ad::Var primary, ad::Var eauc, const EaucConfig& cfg) {
  if (!primary.shape().is_scalar() || !eauc.shape().is_scalar()) {
    throw ShapeError("total_loss: primary and eauc must be scalars");
  }
  return primary + cfg.beta * eauc;
}

}  // namespace eauc
