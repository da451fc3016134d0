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

// Reverse-mode automatic differentiation over dense double matrices.
//
// Values are computed eagerly when a node is appended to the tape; backward()
// sweeps the tape once in reverse creation order, so the cost is one adjoint
// accumulation per edge. There is no implicit broadcasting: the only mixed
// shape ops are the explicit scalar-constant ops (scale, add_scalar) and
// add_bias, which adds a 1 x n row to every row of an m x n matrix.

#pragma once

#include <array>
#include <cmath>
#include <compare>
#include <cstdint>
#include <deque>
#include <functional>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "eauc/error.hpp"
#include "eauc/tensor.hpp"

namespace eauc::ad {

enum class Op : std::uint8_t {
  leaf,
  constant,
  add,
  sub,
  mul,
  matmul,
  scale,
  add_scalar,
  neg,
  tanh,
  log,
  exp,
  sqrt,
  sq_norm,
  sum,
  mean,
  relu,
  sigmoid,
  softmax,
  clamp,
  stop_gradient,
  add_bias,
  row_sum,
};

inline std::string_view op_name(Op op) {
  switch (op) {
    case Op::leaf: return "leaf";
    case Op::constant: return "constant";
    case Op::add: return "add";
    case Op::sub: return "sub";
    case Op::mul: return "mul";
    case Op::matmul: return "matmul";
    case Op::scale: return "scale";
    case Op::add_scalar: return "add_scalar";
    case Op::neg: return "neg";
    case Op::tanh: return "tanh";
    case Op::log: return "log";
    case Op::exp: return "exp";
    case Op::sqrt: return "sqrt";
    case Op::sq_norm: return "sq_norm";
    case Op::sum: return "sum";
    case Op::mean: return "mean";
    case Op::relu: return "relu";
    case Op::sigmoid: return "sigmoid";
    case Op::softmax: return "softmax";
    case Op::clamp: return "clamp";
    case Op::stop_gradient: return "stop_gradient";
    case Op::add_bias: return "add_bias";
    case Op::row_sum: return "row_sum";
  }
  return "?";
}

struct NodeId {
  std::uint32_t index = 0;
  friend auto operator<=>(const NodeId&, const NodeId&) = default;
};

struct Node {
  NodeId id;
  Op op = Op::constant;
  std::array<NodeId, 2> parents{};
  std::uint8_t arity = 0;
  std::array<double, 2> constants{};
  Tensor value;
  Tensor adjoint;
  bool reached = false;
};

class Tape;

/// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, NodeId id) : tape_(tape), id_(id) {}

  Tape& tape() const { return *tape_; }
  NodeId id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

  const Tensor& value() const;
  const Shape& shape() const;
  double item() const { return value().item(); }
  const Tensor& grad() const;

 private:
  Tape* tape_ = nullptr;
  NodeId id_{};
};

using Gradients = std::map<NodeId, Tensor>;

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Trainable parameter.
  Var leaf(Tensor value) {
    Var v = push(Op::leaf, {}, {}, std::move(value));
    leaf_ids_.push_back(v.id());
    return v;
  }

  Var constant(Tensor value) { return push(Op::constant, {}, {}, std::move(value)); }
  Var constant(double value) { return constant(Tensor::scalar(value)); }

  /// Appends one node computed eagerly from `inputs`. `constants` carries the
  /// scalar operands of scale / add_scalar (one) and clamp (lo, hi).
  Var apply(Op op, std::span<const Var> inputs, std::span<const double> constants = {});

  const Node& node(NodeId id) const { return nodes_.at(id.index); }
  std::size_t size() const { return nodes_.size(); }
  const std::vector<NodeId>& leaf_ids() const { return leaf_ids_; }

  void zero_adjoints() {
    for (auto& n : nodes_) {
      n.adjoint = Tensor();
      n.reached = false;
    }
  }

  /// Accumulates d(root)/d(node) into every node's adjoint and returns the
  /// gradients of all leaves. Adjoints are reset first, so repeated calls
  /// are idempotent.
  Gradients backward(Var root);

 private:
  Var push(Op op, std::span<const Var> inputs, std::span<const double> constants, Tensor value) {
    Node n;
    n.id = NodeId{static_cast<std::uint32_t>(nodes_.size())};
    n.op = op;
    n.arity = static_cast<std::uint8_t>(inputs.size());
    for (std::size_t i = 0; i < inputs.size(); ++i) n.parents[i] = inputs[i].id();
    for (std::size_t i = 0; i < constants.size() && i < 2; ++i) n.constants[i] = constants[i];
    n.value = std::move(value);
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.back().id);
  }

  void propagate(Node& n);
  Tensor& adjoint_of(NodeId id) {
    Node& p = nodes_[id.index];
    if (!p.reached) {
      p.adjoint = Tensor(p.value.shape());
      p.reached = true;
    }
    return p.adjoint;
  }

  std::deque<Node> nodes_;  // deque keeps value references stable as the tape grows
  std::vector<NodeId> leaf_ids_;
};

inline const Tensor& Var::value() const { return tape_->node(id_).value; }
inline const Shape& Var::shape() const { return tape_->node(id_).value.shape(); }
inline const Tensor& Var::grad() const { return tape_->node(id_).adjoint; }

namespace detail {

[[noreturn]] inline void shape_mismatch(Op op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op_name(op)) + ": shape mismatch " + a.str() + " vs " + b.str());
}

inline void require_arity(Op op, std::size_t got, std::size_t want) {
  if (got != want) {
    throw ShapeError(std::string(op_name(op)) + ": expected " + std::to_string(want) + " inputs, got " +
                     std::to_string(got));
  }
}

template <class F>
Tensor map(const Tensor& a, F f) {
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i]);
  return out;
}

template <class F>
Tensor zip(const Tensor& a, const Tensor& b, F f) {
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i], b[i]);
  return out;
}

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// out = a * b, (m x k) * (k x n)
inline void gemm(const Tensor& a, const Tensor& b, Tensor& out) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  for (std::size_t i = 0; i < m; ++i) {
    double* orow = out.row_ptr(i);
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a(i, p);
      if (av == 0.0) continue;
      const double* brow = b.row_ptr(p);
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
}

// out += g * b^T, g (m x n), b (k x n), out (m x k)
inline void gemm_nt(const Tensor& g, const Tensor& b, Tensor& out) {
  const std::size_t m = g.rows(), n = g.cols(), k = b.rows();
  for (std::size_t i = 0; i < m; ++i) {
    const double* grow = g.row_ptr(i);
    for (std::size_t p = 0; p < k; ++p) {
      const double* brow = b.row_ptr(p);
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
      out(i, p) += acc;
    }
  }
}

// out += a^T * g, a (m x k), g (m x n), out (k x n)
inline void gemm_tn(const Tensor& a, const Tensor& g, Tensor& out) {
  const std::size_t m = a.rows(), k = a.cols(), n = g.cols();
  for (std::size_t i = 0; i < m; ++i) {
    const double* grow = g.row_ptr(i);
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a(i, p);
      if (av == 0.0) continue;
      double* orow = out.row_ptr(p);
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * grow[j];
    }
  }
}

}  // namespace detail

inline Var Tape::apply(Op op, std::span<const Var> in, std::span<const double> c) {
  using detail::require_arity;
  using detail::shape_mismatch;
  auto need_const = [&](std::size_t n) {
    if (c.size() != n) {
      throw ShapeError(std::string(op_name(op)) + ": expected " + std::to_string(n) + " constants, got " +
                       std::to_string(c.size()));
    }
  };
  for (const Var& v : in) {
    if (&v.tape() != this) throw ShapeError(std::string(op_name(op)) + ": input belongs to another tape");
  }

  switch (op) {
    case Op::leaf:
    case Op::constant:
      throw ShapeError(std::string(op_name(op)) + ": use Tape::leaf / Tape::constant");

    case Op::add:
    case Op::sub:
    case Op::mul: {
      require_arity(op, in.size(), 2);
      const Tensor& a = in[0].value();
      const Tensor& b = in[1].value();
      if (a.shape() != b.shape()) shape_mismatch(op, a.shape(), b.shape());
      Tensor out = op == Op::add   ? detail::zip(a, b, [](double x, double y) { return x + y; })
                   : op == Op::sub ? detail::zip(a, b, [](double x, double y) { return x - y; })
                                   : detail::zip(a, b, [](double x, double y) { return x * y; });
      return push(op, in, c, std::move(out));
    }

    case Op::matmul: {
      require_arity(op, in.size(), 2);
      const Tensor& a = in[0].value();
      const Tensor& b = in[1].value();
      if (a.cols() != b.rows()) shape_mismatch(op, a.shape(), b.shape());
      Tensor out({a.rows(), b.cols()});
      detail::gemm(a, b, out);
      return push(op, in, c, std::move(out));
    }

    case Op::scale:
    case Op::add_scalar: {
      require_arity(op, in.size(), 1);
      need_const(1);
      const double k = c[0];
      Tensor out = op == Op::scale ? detail::map(in[0].value(), [k](double x) { return k * x; })
                                   : detail::map(in[0].value(), [k](double x) { return k + x; });
      return push(op, in, c, std::move(out));
    }

    case Op::neg:
      require_arity(op, in.size(), 1);
      return push(op, in, c, detail::map(in[0].value(), [](double x) { return -x; }));
    case Op::tanh:
      require_arity(op, in.size(), 1);
      return push(op, in, c, detail::map(in[0].value(), [](double x) { return std::tanh(x); }));
    case Op::exp:
      require_arity(op, in.size(), 1);
      return push(op, in, c, detail::map(in[0].value(), [](double x) { return std::exp(x); }));
    case Op::relu:
      require_arity(op, in.size(), 1);
      return push(op, in, c, detail::map(in[0].value(), [](double x) { return x > 0.0 ? x : 0.0; }));
    case Op::sigmoid:
      require_arity(op, in.size(), 1);
      return push(op, in, c, detail::map(in[0].value(), detail::sigmoid));
    case Op::stop_gradient:
      require_arity(op, in.size(), 1);
      return push(op, in, c, in[0].value());

    case Op::log:
    case Op::sqrt: {
      require_arity(op, in.size(), 1);
      const Tensor& a = in[0].value();
      for (std::size_t i = 0; i < a.size(); ++i) {
        const bool bad = op == Op::log ? !(a[i] > 0.0) : !(a[i] >= 0.0);
        if (bad) {
          throw DomainError(std::string(op_name(op)) + ": invalid input " + std::to_string(a[i]) + " at index " +
                            std::to_string(i));
        }
      }
      Tensor out = op == Op::log ? detail::map(a, [](double x) { return std::log(x); })
                                 : detail::map(a, [](double x) { return std::sqrt(x); });
      return push(op, in, c, std::move(out));
    }

    case Op::sq_norm:
    case Op::sum:
    case Op::mean: {
      require_arity(op, in.size(), 1);
      const Tensor& a = in[0].value();
      if (op == Op::mean && a.size() == 0) throw ShapeError("mean: empty input");
      double acc = 0.0;
      for (double x : a.values()) acc += op == Op::sq_norm ? x * x : x;
      if (op == Op::mean) acc /= static_cast<double>(a.size());
      return push(op, in, c, Tensor::scalar(acc));
    }

    case Op::softmax: {
      require_arity(op, in.size(), 1);
      const Tensor& a = in[0].value();
      if (a.size() == 0) throw ShapeError("softmax: empty input");
      double hi = -std::numeric_limits<double>::infinity();
      for (double x : a.values()) hi = std::max(hi, x);
      Tensor out = detail::map(a, [hi](double x) { return std::exp(x - hi); });
      double z = 0.0;
      for (double x : out.values()) z += x;
      for (double& x : out.values()) x /= z;
      return push(op, in, c, std::move(out));
    }

    case Op::clamp: {
      require_arity(op, in.size(), 1);
      need_const(2);
      const double lo = c[0], hi = c[1];
      if (!(lo <= hi)) throw ShapeError("clamp: lower bound exceeds upper bound");
      return push(op, in, c, detail::map(in[0].value(), [lo, hi](double x) { return std::clamp(x, lo, hi); }));
    }

    case Op::add_bias: {
      require_arity(op, in.size(), 2);
      const Tensor& a = in[0].value();
      const Tensor& b = in[1].value();
      if (b.rows() != 1 || b.cols() != a.cols()) shape_mismatch(op, a.shape(), b.shape());
      Tensor out = a;
      for (std::size_t r = 0; r < a.rows(); ++r)
        for (std::size_t j = 0; j < a.cols(); ++j) out(r, j) += b[j];
      return push(op, in, c, std::move(out));
    }

    case Op::row_sum: {
      require_arity(op, in.size(), 1);
      const Tensor& a = in[0].value();
      Tensor out({a.rows(), 1});
      for (std::size_t r = 0; r < a.rows(); ++r) {
        double acc = 0.0;
        for (std::size_t j = 0; j < a.cols(); ++j) acc += a(r, j);
        out[r] = acc;
      }
      return push(op, in, c, std::move(out));
    }
  }
  throw ShapeError("apply: unknown op");
}

inline void Tape::propagate(Node& n) {
  const Tensor& g = n.adjoint;
  const Tensor& y = n.value;
  auto pv = [&](int i) -> const Tensor& { return nodes_[n.parents[i].index].value; };

  switch (n.op) {
    case Op::leaf:
    case Op::constant:
    case Op::stop_gradient:
      return;
    case Op::add: {
      Tensor& a = adjoint_of(n.parents[0]);
      for (std::size_t i = 0; i < g.size(); ++i) a[i] += g[i];
      Tensor& b = adjoint_of(n.parents[1]);
      for (std::size_t i = 0; i < g.size(); ++i) b[i] += g[i];
      return;
    }
    case Op::sub: {
      Tensor& a = adjoint_of(n.parents[0]);
      for (std::size_t i = 0; i < g.size(); ++i) a[i] += g[i];
      Tensor& b = adjoint_of(n.parents[1]);
      for (std::size_t i = 0; i < g.size(); ++i) b[i] -= g[i];
      return;
    }
    case Op::mul: {
      const Tensor& av = pv(0);
      const Tensor& bv = pv(1);
      Tensor& a = adjoint_of(n.parents[0]);
      for (std::size_t i = 0; i < g.size(); ++i) a[i] += g[i] * bv[i];
      Tensor& b = adjoint_of(n.parents[1]);
      for (std::size_t i = 0; i < g.size(); ++i) b[i] += g[i] * av[i];
      return;
    }
    case Op::matmul: {
      detail::gemm_nt(g, pv(1), adjoint_of(n.parents[0]));
      detail::gemm_tn(pv(0), g, adjoint_of(n.parents[1]));
      return;
    }
    case Op::scale: {
      Tensor& a = adjoint_of(n.parents[0]);
      for (std::size_t i = 0; i < g.size(); ++i) a[i] += n.constants[0] * g[i];
      return;
    }
    case Op::add_scalar: {
      Tensor& a = adjoint_of(n.parents[0]);
      for (std::size_t i = 0; i < g.size(); ++i) a[i] += g[i];
      return;
    }
    case Op::neg: {
      Tensor& a = adjoint_of(n.parents[0]);
      for (std::size_t i = 0; i < g.size(); ++i) a[i] -= g[i];
      return;
    }
    case Op::tanh: {
      Tensor& a = adjoint_of(n.parents[0]);
      for (std::size_t i = 0; i < g.size(); ++i) a[i] += g[i] * (1.0 - y[i] * y[i]);
      return;
    }
    case Op::log: {
      const Tensor& x = pv(0);
      Tensor& a = adjoint_of(n.parents[0]);
      for (std::size_t i = 0; i < g.size(); ++i) a[i] += g[i] / x[i];
      return;
    }
    case Op::exp: {
      Tensor& a = adjoint_of(n.parents[0]);
      for (std::size_t i = 0; i < g.size(); ++i) a[i] += g[i] * y[i];
      return;
    }
    case Op::sqrt: {
      Tensor& a = adjoint_of(n.parents[0]);
      for (std::size_t i = 0; i < g.size(); ++i) a[i] += g[i] / (2.0 * y[i]);
      return;
    }
    case Op::sq_norm: {
      const Tensor& x = pv(0);
      Tensor& a = adjoint_of(n.parents[0]);
      for (std::size_t i = 0; i < x.size(); ++i) a[i] += 2.0 * g[0] * x[i];
      return;
    }
    case Op::sum: {
      Tensor& a = adjoint_of(n.parents[0]);
      for (std::size_t i = 0; i < a.size(); ++i) a[i] += g[0];
      return;
    }
    case Op::mean: {
      Tensor& a = adjoint_of(n.parents[0]);
      const double k = g[0] / static_cast<double>(a.size());
      for (std::size_t i = 0; i < a.size(); ++i) a[i] += k;
      return;
    }
    case Op::relu: {
      const Tensor& x = pv(0);
      Tensor& a = adjoint_of(n.parents[0]);
      for (std::size_t i = 0; i < g.size(); ++i) a[i] += x[i] > 0.0 ? g[i] : 0.0;
      return;
    }
    case Op::sigmoid: {
      Tensor& a = adjoint_of(n.parents[0]);
      for (std::size_t i = 0; i < g.size(); ++i) a[i] += g[i] * y[i] * (1.0 - y[i]);
      return;
    }
    case Op::softmax: {
      double dot = 0.0;
      for (std::size_t i = 0; i < g.size(); ++i) dot += g[i] * y[i];
      Tensor& a = adjoint_of(n.parents[0]);
      for (std::size_t i = 0; i < g.size(); ++i) a[i] += y[i] * (g[i] - dot);
      return;
    }
    case Op::clamp: {
      // Boundaries count as inside.
      const Tensor& x = pv(0);
      const double lo = n.constants[0], hi = n.constants[1];
      Tensor& a = adjoint_of(n.parents[0]);
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (x[i] >= lo && x[i] <= hi) a[i] += g[i];
      }
      return;
    }
    case Op::add_bias: {
      Tensor& a = adjoint_of(n.parents[0]);
      for (std::size_t i = 0; i < g.size(); ++i) a[i] += g[i];
      Tensor& b = adjoint_of(n.parents[1]);
      const std::size_t cols = g.cols();
      for (std::size_t r = 0; r < g.rows(); ++r)
        for (std::size_t j = 0; j < cols; ++j) b[j] += g(r, j);
      return;
    }
    case Op::row_sum: {
      Tensor& a = adjoint_of(n.parents[0]);
      const std::size_t cols = a.cols();
      for (std::size_t r = 0; r < a.rows(); ++r)
        for (std::size_t j = 0; j < cols; ++j) a(r, j) += g[r];
      return;
    }
  }
}

inline Gradients Tape::backward(Var root) {
  if (&root.tape() != this) throw ShapeError("backward: root belongs to another tape");
  if (!root.shape().is_scalar()) {
    throw ShapeError("backward: root must be scalar, got shape " + root.shape().str());
  }
  zero_adjoints();
  adjoint_of(root.id())[0] = 1.0;
  for (std::size_t i = root.id().index + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.reached) propagate(n);
  }
  Gradients grads;
  for (NodeId id : leaf_ids_) {
    const Node& n = nodes_[id.index];
    grads.emplace(id, n.reached ? n.adjoint : Tensor(n.value.shape()));
  }
  return grads;
}

// Free-function surface used by the models.

inline Var unary(Op op, Var a) {
  const Var in[1] = {a};
  return a.tape().apply(op, in);
}
inline Var binary(Op op, Var a, Var b) {
  const Var in[2] = {a, b};
  return a.tape().apply(op, in);
}

inline Var operator+(Var a, Var b) { return binary(Op::add, a, b); }
inline Var operator-(Var a, Var b) { return binary(Op::sub, a, b); }
inline Var operator*(Var a, Var b) { return binary(Op::mul, a, b); }
inline Var operator-(Var a) { return unary(Op::neg, a); }
inline Var operator*(double k, Var a) {
  const Var in[1] = {a};
  const double c[1] = {k};
  return a.tape().apply(Op::scale, in, c);
}
inline Var operator+(Var a, double k) {
  const Var in[1] = {a};
  const double c[1] = {k};
  return a.tape().apply(Op::add_scalar, in, c);
}
inline Var operator+(double k, Var a) { return a + k; }
inline Var operator-(Var a, double k) { return a + (-k); }
inline Var operator-(double k, Var a) { return (-1.0 * a) + k; }

inline Var matmul(Var a, Var b) { return binary(Op::matmul, a, b); }
inline Var add_bias(Var a, Var row) { return binary(Op::add_bias, a, row); }
inline Var tanh(Var a) { return unary(Op::tanh, a); }
inline Var log(Var a) { return unary(Op::log, a); }
inline Var exp(Var a) { return unary(Op::exp, a); }
inline Var sqrt(Var a) { return unary(Op::sqrt, a); }
inline Var sq_norm(Var a) { return unary(Op::sq_norm, a); }
inline Var sum(Var a) { return unary(Op::sum, a); }
inline Var mean(Var a) { return unary(Op::mean, a); }
inline Var relu(Var a) { return unary(Op::relu, a); }
inline Var sigmoid(Var a) { return unary(Op::sigmoid, a); }
inline Var softmax(Var a) { return unary(Op::softmax, a); }
inline Var stop_gradient(Var a) { return unary(Op::stop_gradient, a); }
inline Var row_sum(Var a) { return unary(Op::row_sum, a); }
inline Var clamp(Var a, double lo, double hi) {
  const Var in[1] = {a};
  const double c[2] = {lo, hi};
  return a.tape().apply(Op::clamp, in, c);
}

/// Builds a scalar graph from a single leaf input.
using GraphBuilder = std::function<Var(Tape&, Var)>;

/// Max over coordinates of |analytic - central difference| / (|analytic| + 1e-12).
inline double grad_check(const GraphBuilder& f, const Tensor& point, double step) {
  Tensor analytic;
  {
    Tape tape;
    Var x = tape.leaf(point);
    Var y = f(tape, x);
    analytic = tape.backward(y).at(x.id());
  }
  auto eval = [&](const Tensor& at) {
    Tape tape;
    Var x = tape.leaf(at);
    return f(tape, x).item();
  };
  double worst = 0.0;
  for (std::size_t i = 0; i < point.size(); ++i) {
    Tensor plus = point, minus = point;
    plus[i] += step;
    minus[i] -= step;
    const double fd = (eval(plus) - eval(minus)) / (2.0 * step);
    worst = std::max(worst, std::abs(analytic[i] - fd) / (std::abs(analytic[i]) + 1e-12));
  }
  return worst;
}

}  // namespace eauc::ad
