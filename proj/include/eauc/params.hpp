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

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "eauc/autodiff.hpp"
#include "eauc/error.hpp"
#include "eauc/tensor.hpp"

namespace eauc {

/// Ordered collection of named parameter arrays. Order is insertion order
/// and is what checkpoints and optimizers iterate over.
class ParamStore {
 public:
  using Entry = std::pair<std::string, Tensor>;

  void add(std::string name, Tensor value) {
    if (find(name) != nullptr) throw ConfigError("duplicate parameter '" + name + "'");
    entries_.emplace_back(std::move(name), std::move(value));
  }

  Tensor& at(std::string_view name) {
    if (Tensor* t = find(name)) return *t;
    throw ConfigError("unknown parameter '" + std::string(name) + "'");
  }
  const Tensor& at(std::string_view name) const { return const_cast<ParamStore*>(this)->at(name); }
  bool contains(std::string_view name) const { return const_cast<ParamStore*>(this)->find(name) != nullptr; }

  std::size_t size() const { return entries_.size(); }
  std::vector<Entry>& entries() { return entries_; }
  const std::vector<Entry>& entries() const { return entries_; }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& [_, t] : entries_) n += t.size();
    return n;
  }

  bool all_finite() const {
    for (const auto& [_, t] : entries_)
      for (double v : t.values())
        if (!std::isfinite(v)) return false;
    return true;
  }

 private:
  Tensor* find(std::string_view name) {
    for (auto& [n, t] : entries_)
      if (n == name) return &t;
    return nullptr;
  }

  std::vector<Entry> entries_;
};

/// A ParamStore copied onto a tape as trainable leaves.
class BoundParams {
 public:
  BoundParams(ad::Tape& tape, const ParamStore& store) : store_(&store) {
    vars_.reserve(store.size());
    for (const auto& [_, t] : store.entries()) vars_.push_back(tape.leaf(t));
  }

  ad::Var operator[](std::string_view name) const {
    const auto& e = store_->entries();
    for (std::size_t i = 0; i < e.size(); ++i)
      if (e[i].first == name) return vars_[i];
    throw ConfigError("unknown parameter '" + std::string(name) + "'");
  }

  /// Gradients in store order.
  std::vector<Tensor> gradients(const ad::Gradients& grads) const {
    std::vector<Tensor> out;
    out.reserve(vars_.size());
    for (const ad::Var& v : vars_) out.push_back(grads.at(v.id()));
    return out;
  }

 private:
  const ParamStore* store_;
  std::vector<ad::Var> vars_;
};

/// Stateless seed mixing (splitmix64 finalizer) for deriving independent
/// streams from (seed, a, b).
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a = 0, std::uint64_t b = 0) {
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  return mix(mix(mix(seed) ^ a) ^ (b * 0x632be59bd9b4e019ULL));
}

/// Uniform(-a, a) with a = sqrt(6 / (fan_in + fan_out)).
inline Tensor glorot(Shape shape, std::mt19937_64& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(shape.rows + shape.cols));
  std::uniform_real_distribution<double> u(-a, a);
  Tensor t(shape);
  for (double& v : t.values()) v = u(rng);
  return t;
}

}  // namespace eauc
