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

// Robustness and uncertainty-quality metrics.
//
// Retention curves: samples are ranked by uncertainty U, most certain first
// (ties by sample index). At retention fraction f the ceil(f*N) most certain
// samples are retained. The error curve reports the mean over all N samples
// with rejected errors replaced by 0. The F1 curve treats a retained accurate
// sample as a true positive, a retained inaccurate sample as a false
// positive and a rejected accurate sample as a false negative. Fractions are
// sampled on an even grid including 0 and 1; areas use the trapezoid rule.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "eauc/error.hpp"
#include "eauc/traj_model.hpp"

namespace eauc {

inline double ade(const Trajectory& pred, const Trajectory& gt) {
  if (pred.horizon() != gt.horizon()) {
    throw ShapeError("ade: horizon mismatch " + std::to_string(pred.horizon()) + " vs " +
                     std::to_string(gt.horizon()));
  }
  if (gt.horizon() == 0) throw ShapeError("ade: empty trajectory");
  double acc = 0.0;
  for (std::size_t t = 0; t < gt.horizon(); ++t) {
    acc += std::hypot(pred.states[t].x - gt.states[t].x, pred.states[t].y - gt.states[t].y);
  }
  return acc / static_cast<double>(gt.horizon());
}

/// Softmax of raw log-likelihoods, max-shifted.
inline std::vector<double> softmax(std::span<const double> scores) {
  if (scores.empty()) throw ShapeError("softmax: empty input");
  const double hi = *std::max_element(scores.begin(), scores.end());
  std::vector<double> w(scores.size());
  double z = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) z += (w[i] = std::exp(scores[i] - hi));
  for (double& v : w) v /= z;
  return w;
}

inline double weighted_ade(std::span<const double> plan_ades, std::span<const double> certainties) {
  if (plan_ades.empty()) throw ConfigError("weighted_ade: D must be at least 1");
  if (plan_ades.size() != certainties.size()) throw ShapeError("weighted_ade: ADE and certainty counts differ");
  const std::vector<double> w = softmax(certainties);
  double acc = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) acc += w[i] * plan_ades[i];
  return acc;
}

inline double weighted_ade(const PlanSet& plans, const Trajectory& gt) {
  std::vector<double> ades;
  for (const Trajectory& p : plans.plans) ades.push_back(ade(p, gt));
  return weighted_ade(ades, plans.certainties);
}

inline double pearson_r(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("pearson_r: length mismatch");
  if (a.size() < 2) throw DomainError("pearson_r: need at least 2 values");
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (!(saa > 0.0) || !(sbb > 0.0)) throw DomainError("pearson_r: zero variance");
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

/// Probability that a random positive outranks a random negative, ties
/// counted half. Computed from average ranks.
inline double auroc(std::span<const double> scores, const std::vector<bool>& positive) {
  if (scores.size() != positive.size()) throw ShapeError("auroc: length mismatch");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum = 0.0;
  std::size_t pos = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);  // ranks i+1..j
    for (std::size_t k = i; k < j; ++k) {
      if (positive[order[k]]) {
        rank_sum += avg_rank;
        ++pos;
      }
    }
    i = j;
  }
  const std::size_t neg = n - pos;
  if (pos == 0 || neg == 0) throw DomainError("auroc: both classes must be present");
  const double p = static_cast<double>(pos), q = static_cast<double>(neg);
  return (rank_sum - p * (p + 1.0) / 2.0) / (p * q);
}

struct CurvePoint {
  double fraction = 0.0;
  double value = 0.0;
};

struct RetentionCurve {
  std::vector<CurvePoint> points;
  double auc = 0.0;
};

struct F1Retention {
  RetentionCurve curve;
  double f1_auc = 0.0;
  double f1_at_95 = 0.0;
};

namespace detail {

inline std::vector<std::size_t> certainty_order(std::span<const double> uncertainties) {
  std::vector<std::size_t> order(uncertainties.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return uncertainties[a] < uncertainties[b]; });
  return order;
}

/// ceil(j/(grid-1) * n) in exact integer arithmetic.
inline std::size_t retained_count(std::size_t j, std::size_t grid, std::size_t n) {
  const std::size_t den = grid - 1;
  return (j * n + den - 1) / den;
}

inline double trapezoid(const std::vector<CurvePoint>& pts) {
  double area = 0.0;
  for (std::size_t i = 1; i < pts.size(); ++i) {
    area += 0.5 * (pts[i].value + pts[i - 1].value) * (pts[i].fraction - pts[i - 1].fraction);
  }
  return area;
}

inline void check_retention_inputs(std::span<const double> errors, std::span<const double> uncertainties,
                                   std::size_t grid, const char* who) {
  if (errors.empty()) throw DomainError(std::string(who) + ": empty input");
  if (errors.size() != uncertainties.size()) throw ShapeError(std::string(who) + ": length mismatch");
  if (grid < 2) throw ConfigError(std::string(who) + ": grid must have at least 2 points");
}

}  // namespace detail

inline constexpr std::size_t kDefaultRetentionGrid = 101;

inline RetentionCurve error_retention_curve(std::span<const double> errors, std::span<const double> uncertainties,
                                            std::size_t grid = kDefaultRetentionGrid) {
  detail::check_retention_inputs(errors, uncertainties, grid, "error_retention_curve");
  const std::size_t n = errors.size();
  const std::vector<std::size_t> order = detail::certainty_order(uncertainties);
  std::vector<double> prefix(n + 1, 0.0);
  for (std::size_t k = 0; k < n; ++k) prefix[k + 1] = prefix[k] + errors[order[k]];

  RetentionCurve curve;
  for (std::size_t j = 0; j < grid; ++j) {
    const std::size_t kept = detail::retained_count(j, grid, n);
    curve.points.push_back({static_cast<double>(j) / static_cast<double>(grid - 1),
                            prefix[kept] / static_cast<double>(n)});
  }
  curve.auc = detail::trapezoid(curve.points);
  return curve;
}

inline F1Retention f1_retention_curve(std::span<const double> errors, std::span<const double> uncertainties,
                                      double accuracy_threshold, std::size_t grid = kDefaultRetentionGrid) {
  detail::check_retention_inputs(errors, uncertainties, grid, "f1_retention_curve");
  const std::size_t n = errors.size();
  const std::vector<std::size_t> order = detail::certainty_order(uncertainties);
  std::vector<std::size_t> acc_prefix(n + 1, 0);
  for (std::size_t k = 0; k < n; ++k) acc_prefix[k + 1] = acc_prefix[k] + (errors[order[k]] <= accuracy_threshold);
  const std::size_t accurate = acc_prefix[n];

  F1Retention out;
  for (std::size_t j = 0; j < grid; ++j) {
    const std::size_t kept = detail::retained_count(j, grid, n);
    const double tp = static_cast<double>(acc_prefix[kept]);
    const double fp = static_cast<double>(kept - acc_prefix[kept]);
    const double fn = static_cast<double>(accurate - acc_prefix[kept]);
    const double den = 2.0 * tp + fp + fn;
    out.curve.points.push_back({static_cast<double>(j) / static_cast<double>(grid - 1), den > 0 ? 2.0 * tp / den : 0.0});
  }
  out.curve.auc = detail::trapezoid(out.curve.points);
  out.f1_auc = out.curve.auc;
  // Grid point nearest 0.95 from below.
  const std::size_t j95 = static_cast<std::size_t>(std::floor(0.95 * static_cast<double>(grid - 1) + 1e-9));
  out.f1_at_95 = out.curve.points[j95].value;
  return out;
}

/// Per-scene evaluation outcome.
struct EvaluationRecord {
  std::uint64_t scene_id = 0;
  bool shifted = false;
  std::vector<double> plan_ades;
  std::vector<double> certainties;
  double uncertainty = 0.0;
  double weighted_ade = 0.0;
  bool accurate = false;
};

inline EvaluationRecord make_record(std::uint64_t scene_id, bool shifted, const PlanSet& plans,
                                    const Trajectory& gt, double accuracy_threshold) {
  EvaluationRecord r;
  r.scene_id = scene_id;
  r.shifted = shifted;
  for (const Trajectory& p : plans.plans) r.plan_ades.push_back(ade(p, gt));
  r.certainties = plans.certainties;
  r.uncertainty = plans.uncertainty;
  r.weighted_ade = weighted_ade(r.plan_ades, r.certainties);
  r.accurate = r.weighted_ade <= accuracy_threshold;
  return r;
}

struct MetricBundle {
  std::size_t count = 0;
  double weighted_ade = 0.0;
  double r_auc = 0.0;
  double f1_auc = 0.0;
  double f1_at_95 = 0.0;
  // Undefined (nullopt) when a partition has zero variance or one class.
  std::optional<double> pearson_r;
  std::optional<double> auroc;
  RetentionCurve error_curve;
  RetentionCurve f1_curve;
};

struct EvaluationReport {
  MetricBundle full;
  std::optional<MetricBundle> in_distribution;
  std::optional<MetricBundle> shifted;
};

inline MetricBundle compute_bundle(std::span<const EvaluationRecord> records, double accuracy_threshold,
                                   std::size_t grid) {
  if (records.empty()) throw DomainError("evaluation_report: no records");
  std::vector<double> errors, unc, certainty;
  std::vector<bool> acc;
  for (const auto& r : records) {
    errors.push_back(r.weighted_ade);
    unc.push_back(r.uncertainty);
    certainty.push_back(-r.uncertainty);
    acc.push_back(r.weighted_ade <= accuracy_threshold);
  }
  MetricBundle b;
  b.count = records.size();
  b.weighted_ade = std::accumulate(errors.begin(), errors.end(), 0.0) / static_cast<double>(errors.size());
  b.error_curve = error_retention_curve(errors, unc, grid);
  b.r_auc = b.error_curve.auc;
  F1Retention f1 = f1_retention_curve(errors, unc, accuracy_threshold, grid);
  b.f1_curve = f1.curve;
  b.f1_auc = f1.f1_auc;
  b.f1_at_95 = f1.f1_at_95;
  try {
    b.pearson_r = pearson_r(unc, errors);
  } catch (const DomainError&) {
  }
  try {
    b.auroc = auroc(certainty, acc);
  } catch (const DomainError&) {
  }
  return b;
}

/// Metrics on the full record set, and on the in-distribution and shifted
/// partitions when both are present.
inline EvaluationReport evaluation_report(std::span<const EvaluationRecord> records, double accuracy_threshold,
                                          std::size_t grid = kDefaultRetentionGrid) {
  EvaluationReport rep;
  rep.full = compute_bundle(records, accuracy_threshold, grid);
  std::vector<EvaluationRecord> in, sh;
  for (const auto& r : records) (r.shifted ? sh : in).push_back(r);
  if (!in.empty() && !sh.empty()) {
    rep.in_distribution = compute_bundle(in, accuracy_threshold, grid);
    rep.shifted = compute_bundle(sh, accuracy_threshold, grid);
  }
  return rep;
}

}  // namespace eauc
