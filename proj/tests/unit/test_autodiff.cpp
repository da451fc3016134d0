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

#include "eauc/autodiff.hpp"
#include "eauc/eau_loss.hpp"

using namespace eauc;
using namespace eauc::ad;

namespace {

// tanh from the exponential definition, independent of std::tanh.
double tanh_ref(double x) {
  const double e = std::exp(2.0 * x);
  return (e - 1.0) / (e + 1.0);
}

double central_diff(double (*f)(double), double x, double h) { return (f(x + h) - f(x - h)) / (2.0 * h); }

Tensor random_tensor(Shape s, std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(s);
  for (double& v : t.values()) v = u(rng);
  return t;
}

}  // namespace

TEST(ForwardOp, TanhAtZeroIsZero) {
  Tape tape;
  EXPECT_EQ(tanh(tape.constant(0.0)).item(), 0.0);
}

TEST(ForwardOp, TanhAtTwoMatchesReference) {
  Tape tape;
  EXPECT_NEAR(tanh(tape.constant(2.0)).item(), tanh_ref(2.0), 1e-12);
  EXPECT_NEAR(tanh(tape.constant(2.0)).item(), 0.9640276, 1e-6);
}

TEST(ForwardOp, SoftmaxOfEqualEntriesIsUniform) {
  Tape tape;
  const Tensor& s = softmax(tape.constant(Tensor::row({0.0, 0.0}))).value();
  EXPECT_DOUBLE_EQ(s[0], 0.5);
  EXPECT_DOUBLE_EQ(s[1], 0.5);
}

TEST(ForwardOp, ShapeMismatchNamesOpAndShapes) {
  Tape tape;
  Var a = tape.constant(Tensor({2, 3}));
  Var b = tape.constant(Tensor({3, 2}));
  try {
    (void)(a + b);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("add"), std::string::npos) << msg;
    EXPECT_NE(msg.find("(2x3)"), std::string::npos) << msg;
    EXPECT_NE(msg.find("(3x2)"), std::string::npos) << msg;
  }
  EXPECT_THROW((void)matmul(a, a), ShapeError);
}

TEST(ForwardOp, LogOfNonPositiveThrows) {
  Tape tape;
  EXPECT_THROW((void)log(tape.constant(0.0)), DomainError);
  EXPECT_THROW((void)log(tape.constant(-1.0)), DomainError);
  EXPECT_NO_THROW((void)log(tape.constant(0.0) + 1e-8));
}

TEST(ForwardOp, AppendsExactlyOneNode) {
  Tape tape;
  Var x = tape.leaf(Tensor::column({1.0, 2.0}));
  const std::size_t before = tape.size();
  (void)exp(x);
  EXPECT_EQ(tape.size(), before + 1);
}

TEST(ForwardOp, ParentsPrecedeChildren) {
  Tape tape;
  Var x = tape.leaf(Tensor::column({1.0, 2.0}));
  Var y = tape.leaf(Tensor::column({3.0, 4.0}));
  Var z = sum(tanh(x * y) + x);
  (void)z;
  for (std::size_t i = 0; i < tape.size(); ++i) {
    const Node& n = tape.node(NodeId{static_cast<std::uint32_t>(i)});
    for (std::size_t k = 0; k < n.arity; ++k) EXPECT_LT(n.parents[k].index, n.id.index);
  }
}

TEST(ForwardOp, ClampAndStopGradientValues) {
  Tape tape;
  Var x = tape.constant(Tensor::row({-2.0, 0.5, 3.0}));
  const Tensor& c = clamp(x, 0.0, 1.0).value();
  EXPECT_EQ(c[0], 0.0);
  EXPECT_EQ(c[1], 0.5);
  EXPECT_EQ(c[2], 1.0);
  EXPECT_EQ(stop_gradient(x).value()[2], 3.0);
}

TEST(Backward, TanhDerivativeMatchesFiniteDifference) {
  Tape tape;
  Var x = tape.leaf(Tensor::scalar(0.5));
  const Gradients g = tape.backward(tanh(x));
  const double fd = central_diff(tanh_ref, 0.5, 1e-6);
  EXPECT_NEAR(g.at(x.id()).item(), fd, 1e-6);
  EXPECT_NEAR(g.at(x.id()).item(), 0.7864477, 1e-6);
}

TEST(Backward, StopGradientBlocks) {
  Tape tape;
  Var x = tape.leaf(Tensor::scalar(1.5));
  Var y = tape.leaf(Tensor::scalar(-2.0));
  const Gradients g = tape.backward(stop_gradient(x) * y);
  EXPECT_EQ(g.at(x.id()).item(), 0.0);
  EXPECT_EQ(g.at(y.id()).item(), 1.5);
}

TEST(Backward, SumOfSquares) {
  Tape tape;
  Var x = tape.leaf(Tensor::column({1.0, 2.0, 3.0}));
  const Gradients g = tape.backward(sum(x * x));
  const Tensor& gx = g.at(x.id());
  EXPECT_EQ(gx[0], 2.0);
  EXPECT_EQ(gx[1], 4.0);
  EXPECT_EQ(gx[2], 6.0);
}

TEST(Backward, NonScalarRootThrows) {
  Tape tape;
  Var x = tape.leaf(Tensor::column({1.0, 2.0}));
  EXPECT_THROW((void)tape.backward(x * x), ShapeError);
}

TEST(Backward, RerunAfterZeroingIsIdentical) {
  Tape tape;
  Var x = tape.leaf(Tensor::row({0.3, -0.7, 1.1}));
  Var w = tape.leaf(Tensor::column({0.2, 0.4, -0.5}));
  Var root = sum(tanh(matmul(x, w)) * sigmoid(sum(x)));
  const Gradients a = tape.backward(root);
  tape.zero_adjoints();
  const Gradients b = tape.backward(root);
  for (const auto& [id, t] : a) EXPECT_EQ(t.storage(), b.at(id).storage());
}

TEST(Backward, ClampBoundaryCountsAsInside) {
  Tape tape;
  Var x = tape.leaf(Tensor::row({0.0, 1.0, -0.5, 1.5, 0.5}));
  const Gradients grads = tape.backward(sum(clamp(x, 0.0, 1.0)));
  const Tensor& g = grads.at(x.id());
  EXPECT_EQ(g[0], 1.0);
  EXPECT_EQ(g[1], 1.0);
  EXPECT_EQ(g[2], 0.0);
  EXPECT_EQ(g[3], 0.0);
  EXPECT_EQ(g[4], 1.0);
}

TEST(Backward, DeterministicAcrossTapes) {
  auto run = [] {
    Tape tape;
    Var x = tape.leaf(Tensor({2, 2}, {0.1, -0.2, 0.3, 0.4}));
    Var root = mean(exp(matmul(x, x)) + relu(x));
    return std::pair{root.item(), tape.backward(root).at(x.id()).storage()};
  };
  const auto a = run(), b = run();
  EXPECT_EQ(a.first, b.first);
  EXPECT_EQ(a.second, b.second);
}

TEST(GradCheck, Quadratic) {
  const double err = grad_check([](Tape&, Var x) { return sum(x * x); }, Tensor::scalar(3.0), 1e-5);
  EXPECT_LT(err, 1e-6);
}

TEST(GradCheck, LogWithEpsilon) {
  Tape tape;
  Var x = tape.leaf(Tensor::scalar(1.0));
  const double analytic = tape.backward(log(x + 1e-8)).at(x.id()).item();
  EXPECT_NEAR(analytic, 1.0 / (1.0 + 1e-8), 1e-15);
  const double err = grad_check([](Tape&, Var v) { return sum(log(v + 1e-8)); }, Tensor::scalar(1.0), 1e-5);
  EXPECT_LT(err, 1e-5);
}

TEST(GradCheck, EaucLossAtInteriorPoint) {
  EaucConfig cfg;
  cfg.gamma = 3.0;
  // Four samples, one per category, away from both thresholds.
  const Tensor certainties = Tensor::column({0.9, 0.3, 0.8, 0.2});
  const Tensor ades = Tensor::column({0.3, 0.4, 1.3, 1.6});
  const double err_c = grad_check(
      [&](Tape& t, Var c) { return eauc_loss(soft_counts(t.constant(ades), c, cfg), cfg); }, certainties, 1e-5);
  const double err_a = grad_check(
      [&](Tape& t, Var a) { return eauc_loss(soft_counts(a, t.constant(certainties), cfg), cfg); }, ades, 1e-5);
  EXPECT_LT(err_c, 1e-4);
  EXPECT_LT(err_a, 1e-4);
}

// Each supported op, composed with a smooth reduction, at 10 random interior
// points.
// stop_gradient is excluded: it disagrees with finite differences by design.
TEST(GradCheck, EverySupportedOpAtRandomPoints) {
  std::mt19937_64 rng(7);
  const Tensor w = Tensor({3, 2}, {0.3, -0.2, 0.5, 0.1, -0.4, 0.7});
  const Tensor c = Tensor({2, 3}, {0.6, -0.1, 0.2, 0.9, 0.4, -0.3});
  const Tensor bias = Tensor::row({0.25, -0.5, 0.75});
  const Tensor weights = Tensor({2, 3}, {1.0, -2.0, 0.5, 1.5, 0.3, -0.7});
  auto weighted = [&](Tape& t, Var v) { return sum(v * t.constant(weights)); };
  const std::vector<std::pair<const char*, GraphBuilder>> cases = {
      {"add", [&](Tape& t, Var x) { return weighted(t, x + t.constant(c)); }},
      {"sub", [&](Tape& t, Var x) { return weighted(t, t.constant(c) - x); }},
      {"mul", [&](Tape& t, Var x) { return weighted(t, x * x); }},
      {"matmul", [&](Tape& t, Var x) { return sum(tanh(matmul(x, t.constant(w)))); }},
      {"scale", [&](Tape& t, Var x) { return weighted(t, 2.5 * x); }},
      {"add_scalar", [&](Tape& t, Var x) { return weighted(t, (x + 3.0) * x); }},
      {"neg", [&](Tape& t, Var x) { return weighted(t, -(x * x)); }},
      {"tanh", [&](Tape& t, Var x) { return weighted(t, tanh(x)); }},
      {"log", [&](Tape& t, Var x) { return weighted(t, log(x * x + 0.5)); }},
      {"exp", [&](Tape& t, Var x) { return weighted(t, exp(x)); }},
      {"sqrt", [&](Tape& t, Var x) { return weighted(t, sqrt(x * x + 0.3)); }},
      {"sq_norm", [&](Tape&, Var x) { return sq_norm(x); }},
      {"sum", [&](Tape&, Var x) { return sum(x * x * x); }},
      {"mean", [&](Tape&, Var x) { return mean(exp(x)); }},
      {"relu", [&](Tape& t, Var x) { return weighted(t, relu(x) * x); }},
      {"sigmoid", [&](Tape& t, Var x) { return weighted(t, sigmoid(x)); }},
      {"softmax", [&](Tape& t, Var x) { return weighted(t, softmax(x)); }},
      {"clamp", [&](Tape& t, Var x) { return weighted(t, clamp(x, -5.0, 5.0) * x); }},
      {"add_bias", [&](Tape& t, Var x) { return weighted(t, add_bias(x, t.constant(bias)) * x); }},
      {"row_sum", [&](Tape&, Var x) { return sum(exp(row_sum(x))); }},
  };
  for (const auto& [name, f] : cases) {
    for (int trial = 0; trial < 10; ++trial) {
      // Magnitudes kept away from zero so relu sits off its kink and the
      // relative-error denominator is well conditioned.
      Tensor x = random_tensor({2, 3}, rng, 0.2, 1.5);
      for (double& v : x.values())
        if (rng() % 2) v = -v;
      EXPECT_LT(grad_check(f, x, 1e-5), 1e-4) << name << " trial " << trial;
    }
  }
}

TEST(GradCheck, BackwardVisitsEachEdgeOnce) {
  // A chain of n additions: every node's adjoint is written once, so the
  // gradient of sum(x + x + ... + x) is exactly n.
  Tape tape;
  Var x = tape.leaf(Tensor::scalar(1.0));
  Var acc = x;
  const int n = 200;
  for (int i = 1; i < n; ++i) acc = acc + x;
  EXPECT_EQ(tape.backward(acc).at(x.id()).item(), static_cast<double>(n));
}
