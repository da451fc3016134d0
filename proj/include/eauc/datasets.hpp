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

#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "eauc/error.hpp"
#include "eauc/params.hpp"
#include "eauc/tensor.hpp"
#include "eauc/traj_model.hpp"

namespace eauc {

// ---------------------------------------------------------------------------
// Synthetic trajectory scenes
// ---------------------------------------------------------------------------

struct ManeuverMix {
  double constant_velocity = 0.5;
  double constant_turn = 0.35;
  double stop = 0.15;
};

/// Scenes are generated in the agent frame: the agent sits at the origin
/// heading along +x at T=0. Constant-velocity and constant-turn maneuvers
/// hold over the whole scene, so they are visible in the context. A stop
/// maneuver drives straight through the context and starts braking at a
/// random time after T=0. Every observed position (context and target)
/// carries isotropic Gaussian noise whose per-scene scale is
/// noise_scale * U(0.25, 1.75).
struct SynthConfig {
  std::size_t scenes = 2000;
  std::size_t shifted_scenes = 400;
  std::size_t context_steps = 5;
  std::size_t horizon_steps = 25;
  double timestep = 0.2;
  ManeuverMix mix{};
  double noise_scale = 0.3;
  ManeuverMix shift_mix{0.35, 0.35, 0.30};
  double shift_noise_multiplier = 3.0;
  double speed_min = 3.0;
  double speed_max = 12.0;
  double yaw_rate_min = 0.05;
  double yaw_rate_max = 0.35;
  double decel_min = 0.5;
  double decel_max = 2.0;
  double brake_onset_max = 2.0;
  std::uint64_t seed = 1;

  std::size_t context_dim() const { return 5 * context_steps; }

  void validate() const {
    auto check_mix = [](const ManeuverMix& m, const char* which) {
      if (m.constant_velocity < 0 || m.constant_turn < 0 || m.stop < 0 ||
          std::abs(m.constant_velocity + m.constant_turn + m.stop - 1.0) > 1e-9) {
        throw ConfigError(std::string("synth: ") + which + " probabilities must be non-negative and sum to 1");
      }
    };
    check_mix(mix, "maneuver");
    check_mix(shift_mix, "shift maneuver");
    if (context_steps < 1 || horizon_steps < 1) throw ConfigError("synth: step counts must be >= 1");
    if (!(timestep > 0)) throw ConfigError("synth: timestep must be > 0");
    if (noise_scale < 0 || shift_noise_multiplier < 0) throw ConfigError("synth: noise must be >= 0");
    if (!(speed_min <= speed_max) || !(yaw_rate_min <= yaw_rate_max) || !(decel_min <= decel_max)) {
      throw ConfigError("synth: range bounds out of order");
    }
  }
};

enum class Maneuver { constant_velocity, constant_turn, stop };

namespace synth {

struct Kinematics {
  Maneuver maneuver = Maneuver::constant_velocity;
  double speed = 0.0;
  double yaw_rate = 0.0;
  double decel = 0.0;
  double brake_onset = 0.0;

  /// Noise-free position at time t (seconds, T=0 at the origin).
  Point2 at(double t) const {
    switch (maneuver) {
      case Maneuver::constant_velocity:
        return {speed * t, 0.0};
      case Maneuver::constant_turn:
        if (std::abs(yaw_rate) < 1e-12) return {speed * t, 0.0};
        return {speed / yaw_rate * std::sin(yaw_rate * t), speed / yaw_rate * (1.0 - std::cos(yaw_rate * t))};
      case Maneuver::stop: {
        if (t <= brake_onset) return {speed * t, 0.0};
        const double tau = std::min(t - brake_onset, speed / decel);
        return {speed * brake_onset + speed * tau - 0.5 * decel * tau * tau, 0.0};
      }
    }
    return {};
  }
};

inline SceneSample make_scene(std::uint64_t id, bool shifted, const SynthConfig& cfg, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * u01(rng); };
  const ManeuverMix& mix = shifted ? cfg.shift_mix : cfg.mix;

  Kinematics k;
  const double pick = u01(rng);
  k.maneuver = pick < mix.constant_velocity                   ? Maneuver::constant_velocity
               : pick < mix.constant_velocity + mix.constant_turn ? Maneuver::constant_turn
                                                                  : Maneuver::stop;
  k.speed = uniform(cfg.speed_min, cfg.speed_max);
  k.yaw_rate = uniform(cfg.yaw_rate_min, cfg.yaw_rate_max) * (u01(rng) < 0.5 ? -1.0 : 1.0);
  k.decel = uniform(cfg.decel_min, cfg.decel_max);
  k.brake_onset = uniform(0.0, cfg.brake_onset_max);
  const double noise = cfg.noise_scale * (shifted ? cfg.shift_noise_multiplier : 1.0) * uniform(0.25, 1.75);
  std::normal_distribution<double> jitter(0.0, 1.0);
  auto observe = [&](double t) {
    Point2 p = k.at(t);
    p.x += noise * jitter(rng);
    p.y += noise * jitter(rng);
    return p;
  };

  const std::size_t kc = cfg.context_steps;
  const double dt = cfg.timestep;
  std::vector<Point2> past(kc + 1);
  for (std::size_t i = 0; i <= kc; ++i) past[i] = observe(-static_cast<double>(kc - i) * dt);

  SceneSample s;
  s.scene_id = id;
  s.shifted = shifted;
  s.context.reserve(cfg.context_dim());
  for (std::size_t i = 1; i <= kc; ++i) {
    const double vx = (past[i].x - past[i - 1].x) / dt, vy = (past[i].y - past[i - 1].y) / dt;
    s.context.insert(s.context.end(), {past[i].x, past[i].y, vx, vy, std::atan2(vy, vx)});
  }
  s.target.timestep = dt;
  s.target.states.reserve(cfg.horizon_steps);
  for (std::size_t t = 1; t <= cfg.horizon_steps; ++t) s.target.states.push_back(observe(static_cast<double>(t) * dt));
  return s;
}

}  // namespace synth

/// In-distribution scenes (ids 0..scenes-1) followed by shifted scenes.
inline std::vector<SceneSample> generate_scenes(const SynthConfig& cfg) {
  cfg.validate();
  std::vector<SceneSample> out;
  out.reserve(cfg.scenes + cfg.shifted_scenes);
  for (std::size_t i = 0; i < cfg.scenes + cfg.shifted_scenes; ++i) {
    std::mt19937_64 rng(mix_seed(cfg.seed, 0x5ce7e, i));
    out.push_back(synth::make_scene(i, i >= cfg.scenes, cfg, rng));
  }
  return out;
}

/// Extrapolates the last observed context velocity over the horizon.
inline Trajectory constant_velocity_extrapolation(const SceneSample& s, std::size_t horizon, double timestep) {
  const std::size_t n = s.context.size();
  if (n < 5) throw ShapeError("constant_velocity_extrapolation: context too short");
  const double vx = s.context[n - 3], vy = s.context[n - 2];
  Trajectory out;
  out.timestep = timestep;
  for (std::size_t t = 1; t <= horizon; ++t) {
    out.states.push_back({vx * timestep * static_cast<double>(t), vy * timestep * static_cast<double>(t)});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Text parsing helpers
// ---------------------------------------------------------------------------

namespace text {

inline std::vector<std::string_view> split(std::string_view line, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(sep, start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline bool parse_double(std::string_view s, double& out) {
  s = trim(s);
  if (s.empty()) return false;
  if (s.front() == '+') s.remove_prefix(1);
  const auto res = std::from_chars(s.data(), s.data() + s.size(), out);
  return res.ec == std::errc() && res.ptr == s.data() + s.size() && std::isfinite(out);
}

inline bool parse_u64(std::string_view s, std::uint64_t& out) {
  s = trim(s);
  const auto res = std::from_chars(s.data(), s.data() + s.size(), out);
  return !s.empty() && res.ec == std::errc() && res.ptr == s.data() + s.size();
}

/// Shortest text that reads back to the same double.
inline std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

}  // namespace text

// ---------------------------------------------------------------------------
// Scene files
//
//   # eauc-scenes v1 context_dim=<n> horizon=<L> timestep=<dt>
//   scene_id,shifted,c0,...,c<n-1>,x1,y1,...,x<L>,y<L>
//   <one row per scene>
// ---------------------------------------------------------------------------

inline void write_scenes(std::ostream& os, const std::vector<SceneSample>& scenes) {
  if (scenes.empty()) throw ConfigError("write_scenes: no scenes");
  const std::size_t n = scenes.front().context.size(), horizon = scenes.front().target.horizon();
  os << "# eauc-scenes v1 context_dim=" << n << " horizon=" << horizon
     << " timestep=" << text::format_double(scenes.front().target.timestep) << "\n";
  os << "scene_id,shifted";
  for (std::size_t i = 0; i < n; ++i) os << ",c" << i;
  for (std::size_t t = 1; t <= horizon; ++t) os << ",x" << t << ",y" << t;
  os << "\n";
  for (const auto& s : scenes) {
    if (s.context.size() != n || s.target.horizon() != horizon) {
      throw ShapeError("write_scenes: scene " + std::to_string(s.scene_id) + " has inconsistent dimensions");
    }
    os << s.scene_id << "," << (s.shifted ? 1 : 0);
    for (double v : s.context) os << "," << text::format_double(v);
    for (const Point2& p : s.target.states) os << "," << text::format_double(p.x) << "," << text::format_double(p.y);
    os << "\n";
  }
}

inline std::vector<SceneSample> read_scenes(std::istream& is, const std::string& source = "<scenes>") {
  std::string line;
  std::size_t lineno = 1;
  if (!std::getline(is, line)) throw ParseError(source, lineno, "empty scene file");
  std::size_t dim = 0, horizon = 0;
  double timestep = 0.0;
  {
    std::istringstream hs(line);
    std::string hash, magic, version;
    hs >> hash >> magic >> version;
    if (hash != "#" || magic != "eauc-scenes" || version != "v1") {
      throw ParseError(source, lineno, "missing '# eauc-scenes v1' header");
    }
    std::string kv;
    while (hs >> kv) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw ParseError(source, lineno, "bad header field '" + kv + "'");
      const std::string key = kv.substr(0, eq), val = kv.substr(eq + 1);
      std::uint64_t u = 0;
      if (key == "context_dim" && text::parse_u64(val, u)) dim = u;
      else if (key == "horizon" && text::parse_u64(val, u)) horizon = u;
      else if (key == "timestep" && text::parse_double(val, timestep)) {
      } else {
        throw ParseError(source, lineno, "bad header field '" + kv + "'");
      }
    }
    if (dim == 0 || horizon == 0 || !(timestep > 0)) throw ParseError(source, lineno, "incomplete header");
  }
  ++lineno;
  if (!std::getline(is, line)) throw ParseError(source, lineno, "missing column header");
  const std::size_t columns = 2 + dim + 2 * horizon;
  if (text::split(line, ',').size() != columns) throw ParseError(source, lineno, "column header width mismatch");

  std::vector<SceneSample> out;
  while (std::getline(is, line)) {
    ++lineno;
    if (text::trim(line).empty()) continue;
    const auto cells = text::split(line, ',');
    if (cells.size() != columns) {
      throw ParseError(source, lineno,
                       "expected " + std::to_string(columns) + " columns, got " + std::to_string(cells.size()));
    }
    SceneSample s;
    std::uint64_t flag = 0;
    if (!text::parse_u64(cells[0], s.scene_id)) throw ParseError(source, lineno, "bad scene_id");
    if (!text::parse_u64(cells[1], flag) || flag > 1) throw ParseError(source, lineno, "bad shifted flag");
    s.shifted = flag == 1;
    s.context.resize(dim);
    for (std::size_t i = 0; i < dim; ++i) {
      if (!text::parse_double(cells[2 + i], s.context[i])) {
        throw ParseError(source, lineno, "non-numeric context value in column " + std::to_string(2 + i));
      }
    }
    s.target.timestep = timestep;
    s.target.states.resize(horizon);
    for (std::size_t t = 0; t < horizon; ++t) {
      const std::size_t c = 2 + dim + 2 * t;
      if (!text::parse_double(cells[c], s.target.states[t].x) || !text::parse_double(cells[c + 1], s.target.states[t].y)) {
        throw ParseError(source, lineno, "non-numeric target value in column " + std::to_string(c));
      }
    }
    out.push_back(std::move(s));
  }
  if (out.empty()) throw ParseError(source, lineno, "no scenes");
  return out;
}

inline void save_scenes(const std::string& path, const std::vector<SceneSample>& scenes) {
  std::ofstream os(path);
  if (!os) throw UserError("cannot write " + path);
  write_scenes(os, scenes);
}

inline std::vector<SceneSample> load_scenes(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw UserError("cannot open " + path);
  return read_scenes(is, path);
}

// ---------------------------------------------------------------------------
// Regression tables
// ---------------------------------------------------------------------------

enum class Split : std::uint8_t { train, validation, test };

struct SplitRatios {
  double train = 0.8;
  double validation = 0.1;
  double test = 0.1;
};

/// Features are standardized with train-split statistics; `raw_features`
/// keeps the parsed values.
struct RegressionTable {
  std::vector<std::string> feature_names;
  std::string target_name;
  Tensor raw_features;  // rows x features
  Tensor features;      // standardized
  std::vector<double> targets;
  std::vector<double> feature_mean;
  std::vector<double> feature_std;
  std::vector<Split> split;
  std::uint64_t split_seed = 0;

  std::size_t rows() const { return targets.size(); }
  std::vector<std::size_t> indices(Split which) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < split.size(); ++i)
      if (split[i] == which) out.push_back(i);
    return out;
  }
};

/// Comma-separated, one header row, numeric cells only. Header names may be
/// wrapped in double quotes.
inline RegressionTable read_regression_table(std::istream& is, const std::string& target_column,
                                             std::uint64_t split_seed, SplitRatios ratios,
                                             const std::string& source = "<table>") {
  if (ratios.train <= 0 || ratios.validation < 0 || ratios.test < 0 ||
      std::abs(ratios.train + ratios.validation + ratios.test - 1.0) > 1e-9) {
    throw ConfigError("split ratios must be non-negative, train > 0, and sum to 1");
  }
  std::string line;
  std::size_t lineno = 1;
  if (!std::getline(is, line) || text::trim(line).empty()) throw ParseError(source, lineno, "empty file");
  std::vector<std::string> header;
  for (auto cell : text::split(line, ',')) {
    cell = text::trim(cell);
    if (cell.size() >= 2 && cell.front() == '"' && cell.back() == '"') cell = cell.substr(1, cell.size() - 2);
    header.emplace_back(cell);
  }
  const auto target_it = std::find(header.begin(), header.end(), target_column);
  if (target_it == header.end()) throw ConfigError("target column '" + target_column + "' not found in " + source);
  const std::size_t target_col = static_cast<std::size_t>(target_it - header.begin());

  RegressionTable tab;
  tab.target_name = target_column;
  tab.split_seed = split_seed;
  for (std::size_t c = 0; c < header.size(); ++c)
    if (c != target_col) tab.feature_names.push_back(header[c]);
  const std::size_t nf = tab.feature_names.size();

  std::vector<double> feats;
  while (std::getline(is, line)) {
    ++lineno;
    if (text::trim(line).empty()) continue;
    const auto cells = text::split(line, ',');
    if (cells.size() != header.size()) {
      throw ParseError(source, lineno,
                       "expected " + std::to_string(header.size()) + " columns, got " + std::to_string(cells.size()));
    }
    for (std::size_t c = 0; c < cells.size(); ++c) {
      double v = 0.0;
      if (!text::parse_double(cells[c], v)) {
        throw ParseError(source, lineno, "non-numeric cell in column '" + header[c] + "'");
      }
      if (c == target_col) tab.targets.push_back(v);
      else feats.push_back(v);
    }
  }
  const std::size_t n = tab.targets.size();
  if (n == 0) throw ParseError(source, lineno, "no data rows");
  tab.raw_features = Tensor({n, nf}, std::move(feats));

  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::mt19937_64 rng(mix_seed(split_seed, 0x5b117));
  std::shuffle(perm.begin(), perm.end(), rng);
  const auto n_train = static_cast<std::size_t>(std::llround(ratios.train * static_cast<double>(n)));
  const auto n_val = std::min(n - std::min(n, n_train),
                              static_cast<std::size_t>(std::llround(ratios.validation * static_cast<double>(n))));
  if (n_train == 0) throw ConfigError("split leaves the train partition empty");
  tab.split.assign(n, Split::test);
  for (std::size_t k = 0; k < n; ++k) {
    tab.split[perm[k]] = k < n_train ? Split::train : (k < n_train + n_val ? Split::validation : Split::test);
  }

  tab.feature_mean.assign(nf, 0.0);
  tab.feature_std.assign(nf, 0.0);
  const std::vector<std::size_t> train = tab.indices(Split::train);
  for (std::size_t j = 0; j < nf; ++j) {
    double m = 0.0;
    for (std::size_t i : train) m += tab.raw_features(i, j);
    m /= static_cast<double>(train.size());
    double v = 0.0;
    for (std::size_t i : train) v += (tab.raw_features(i, j) - m) * (tab.raw_features(i, j) - m);
    v /= static_cast<double>(train.size());
    if (!(v > 0.0)) throw DomainError("feature column '" + tab.feature_names[j] + "' has zero variance on the train split");
    tab.feature_mean[j] = m;
    tab.feature_std[j] = std::sqrt(v);
  }
  tab.features = Tensor({n, nf});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < nf; ++j)
      tab.features(i, j) = (tab.raw_features(i, j) - tab.feature_mean[j]) / tab.feature_std[j];
  return tab;
}

inline RegressionTable load_regression_table(const std::string& path, const std::string& target_column,
                                             std::uint64_t split_seed, SplitRatios ratios) {
  std::ifstream is(path);
  if (!is) throw UserError("cannot open " + path);
  return read_regression_table(is, target_column, split_seed, ratios, path);
}

}  // namespace eauc
