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

// Parameter checkpoints as a JSON document:
//
//   {
//     "format": "eauc-checkpoint",
//     "format_version": 1,
//     "model": "trajectory" | "bnn",
//     "config": { model hyperparameters },
//     "meta": { free-form string/number pairs, e.g. epoch, val_nll },
//     "arrays": [ { "name": "...", "shape": [rows, cols], "data": [...] } ]
//   }
//
// Arrays appear in parameter-store order and data is row-major. Doubles are
// written in shortest round-trip form so a load/save cycle is lossless.

#pragma once

#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <utility>

#include <nlohmann/json.hpp>

#include "eauc/bnn_model.hpp"
#include "eauc/error.hpp"
#include "eauc/params.hpp"
#include "eauc/traj_model.hpp"

namespace eauc {

inline constexpr int kCheckpointVersion = 1;

using CheckpointMeta = std::map<std::string, double>;

namespace ckpt {

using nlohmann::json;

inline json arrays_to_json(const ParamStore& store) {
  json arr = json::array();
  for (const auto& [name, t] : store.entries()) {
    arr.push_back({{"name", name}, {"shape", {t.rows(), t.cols()}}, {"data", t.storage()}});
  }
  return arr;
}

inline ParamStore arrays_from_json(const json& arr) {
  ParamStore store;
  for (const json& a : arr) {
    const auto shape = a.at("shape").get<std::vector<std::size_t>>();
    if (shape.size() != 2) throw ParseError("checkpoint", 0, "array shape must have two entries");
    store.add(a.at("name").get<std::string>(),
              Tensor({shape[0], shape[1]}, a.at("data").get<std::vector<double>>()));
  }
  return store;
}

inline json envelope(const char* model, json config, const CheckpointMeta& meta, const ParamStore& store) {
  json j;
  j["format"] = "eauc-checkpoint";
  j["format_version"] = kCheckpointVersion;
  j["model"] = model;
  j["config"] = std::move(config);
  j["meta"] = meta;
  j["arrays"] = arrays_to_json(store);
  return j;
}

inline json parse_envelope(std::istream& is, const std::string& source, const char* expected_model) {
  json j;
  try {
    j = json::parse(is);
  } catch (const json::parse_error& e) {
    throw ParseError(source, 0, e.what());
  }
  if (j.value("format", "") != "eauc-checkpoint") throw ParseError(source, 0, "not an eauc checkpoint");
  if (j.value("format_version", 0) != kCheckpointVersion) {
    throw ParseError(source, 0, "unsupported checkpoint version " + j.value("format_version", json(0)).dump());
  }
  if (j.value("model", "") != expected_model) {
    throw ConfigError(source + ": checkpoint holds a '" + j.value("model", "") + "' model, expected '" +
                      expected_model + "'");
  }
  return j;
}

}  // namespace ckpt

inline void write_checkpoint(std::ostream& os, const TrajModelParams& p, const CheckpointMeta& meta = {}) {
  const TrajModelConfig& c = p.config;
  nlohmann::json cfg = {{"context_dim", c.context_dim},     {"horizon", c.horizon},
                        {"hidden", c.hidden},               {"timestep", c.timestep},
                        {"context_scale", c.context_scale}, {"input_scale", c.input_scale},
                        {"log_sigma_min", c.log_sigma_min}, {"log_sigma_max", c.log_sigma_max}};
  os << ckpt::envelope("trajectory", std::move(cfg), meta, p.weights).dump(1) << '\n';
}

inline void write_checkpoint(std::ostream& os, const BnnParams& p, const CheckpointMeta& meta = {}) {
  const BnnConfig& c = p.config;
  nlohmann::json cfg = {{"input_dim", c.input_dim},     {"hidden", c.hidden},
                        {"dropout", c.dropout},         {"init_noise_std", c.init_noise_std},
                        {"target_mean", p.target_mean}, {"target_std", p.target_std}};
  os << ckpt::envelope("bnn", std::move(cfg), meta, p.weights).dump(1) << '\n';
}

inline TrajModelParams read_traj_checkpoint(std::istream& is, const std::string& source = "<stream>",
                                            CheckpointMeta* meta = nullptr) {
  const auto j = ckpt::parse_envelope(is, source, "trajectory");
  try {
    const auto& c = j.at("config");
    TrajModelParams p;
    p.config.context_dim = c.at("context_dim").get<std::size_t>();
    p.config.horizon = c.at("horizon").get<std::size_t>();
    p.config.hidden = c.at("hidden").get<std::size_t>();
    p.config.timestep = c.at("timestep").get<double>();
    p.config.context_scale = c.at("context_scale").get<double>();
    p.config.input_scale = c.at("input_scale").get<double>();
    p.config.log_sigma_min = c.at("log_sigma_min").get<double>();
    p.config.log_sigma_max = c.at("log_sigma_max").get<double>();
    p.weights = ckpt::arrays_from_json(j.at("arrays"));
    if (meta) *meta = j.at("meta").get<CheckpointMeta>();
    validate_traj_params(p);
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(source, 0, e.what());
  }
}

inline BnnParams read_bnn_checkpoint(std::istream& is, const std::string& source = "<stream>",
                                     CheckpointMeta* meta = nullptr) {
  const auto j = ckpt::parse_envelope(is, source, "bnn");
  try {
    const auto& c = j.at("config");
    BnnParams p;
    p.config.input_dim = c.at("input_dim").get<std::size_t>();
    p.config.hidden = c.at("hidden").get<std::size_t>();
    p.config.dropout = c.at("dropout").get<double>();
    p.config.init_noise_std = c.at("init_noise_std").get<double>();
    p.target_mean = c.at("target_mean").get<double>();
    p.target_std = c.at("target_std").get<double>();
    p.weights = ckpt::arrays_from_json(j.at("arrays"));
    if (meta) *meta = j.at("meta").get<CheckpointMeta>();
    validate_bnn_params(p);
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(source, 0, e.what());
  }
}

template <typename Params>
void save_checkpoint(const std::string& path, const Params& p, const CheckpointMeta& meta = {}) {
  std::ofstream os(path);
  if (!os) throw ConfigError("cannot write checkpoint '" + path + "'");
  write_checkpoint(os, p, meta);
  if (!os) throw ConfigError("failed writing checkpoint '" + path + "'");
}

inline std::ifstream open_checkpoint(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open checkpoint '" + path + "'");
  return is;
}

inline TrajModelParams load_traj_checkpoint(const std::string& path, CheckpointMeta* meta = nullptr) {
  auto is = open_checkpoint(path);
  return read_traj_checkpoint(is, path, meta);
}

inline BnnParams load_bnn_checkpoint(const std::string& path, CheckpointMeta* meta = nullptr) {
  auto is = open_checkpoint(path);
  return read_bnn_checkpoint(is, path, meta);
}

}  // namespace eauc
