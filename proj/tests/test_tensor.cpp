// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "vsc/exact_sum.hpp"
#include "vsc/rng.hpp"
#include "vsc/tensor.hpp"

using namespace vsc;

namespace {

Tensor random_tensor(Shape s, Rng& rng, double scale = 1.0) {
  Tensor t(std::move(s));
  for (auto& v : t.data) v = rng.normal() * scale;
  return t;
}

// Reduces an op output to a scalar with fixed random weights so gradients
// are non-uniform.
Var weighted_sum(Graph& g, Var x, const std::vector<double>& w) {
  return g.sum(g.mul(x, g.constant(g.val(x).shape, std::vector<double>(w))));
}

}  // namespace

TEST_CASE("matmul basics") {
  Graph g;
  Var a = g.constant({2, 2}, {1, 2, 3, 4});
  Var i2 = g.constant(Tensor::identity(2));
  CHECK(g.val(g.matmul(a, i2)).data == std::vector<double>{1, 2, 3, 4});

  Var r = g.constant({1, 2}, {1, 2});
  Var c = g.constant({2, 1}, {3, 4});
  CHECK(g.val(g.matmul(r, c)).data == std::vector<double>{11});

  Var z = g.constant({1, 2}, {0, 0});
  Var v = g.constant({2, 1}, {5, 7});
  CHECK(g.val(g.matmul(z, v)).data == std::vector<double>{0});

  Var bad = g.constant({3, 1}, {1, 2, 3});
  CHECK_THROWS_AS(g.matmul(r, bad), std::invalid_argument);
}

TEST_CASE("softmax closed forms and stability") {
  Graph g;
  Var s0 = g.softmax(g.constant({1, 2}, {0, 0}), 1);
  CHECK(g.val(s0).at(0) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(g.val(s0).at(1) == doctest::Approx(0.5).epsilon(1e-15));

  Var s1 = g.softmax(g.constant({1, 2}, {0.0, std::log(3.0)}), 1);
  CHECK(std::abs(g.val(s1).at(0) - 0.25) < 1e-12);
  CHECK(std::abs(g.val(s1).at(1) - 0.75) < 1e-12);

  Var s2 = g.softmax(g.constant({1, 2}, {1000.0, 0.0}), 1);
  CHECK(std::abs(g.val(s2).at(0) - 1.0) < 1e-12);
  CHECK(std::abs(g.val(s2).at(1) - 0.0) < 1e-12);
}

TEST_CASE("softmax rows sum to one and shift invariance") {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    Graph g;
    Tensor x = random_tensor({4, 6}, rng, 3.0);
    Var sm = g.softmax(g.constant(x), 1);
    for (int i = 0; i < 4; ++i) {
      double row = 0.0;
      for (int j = 0; j < 6; ++j) row += g.val(sm).at(i, j);
      CHECK(std::abs(row - 1.0) <= 1e-12);
    }
    const double shift = rng.uniform(-5.0, 5.0);
    Tensor xs = x;
    for (auto& v : xs.data) v += shift;
    Var sm2 = g.softmax(g.constant(xs), 1);
    for (std::size_t i = 0; i < g.val(sm).data.size(); ++i)
      CHECK(g.val(sm2).data[i] == doctest::Approx(g.val(sm).data[i]).epsilon(1e-12));
  }
}

TEST_CASE("sigmoid closed forms") {
  Graph g;
  CHECK(g.val(g.sigmoid(g.scalar(0.0))).at(0) == 0.5);
  CHECK(std::abs(g.val(g.sigmoid(g.scalar(100.0))).at(0) - 1.0) < 1e-12);
  const double sp = g.val(g.sigmoid(g.scalar(1.0))).at(0);
  const double sn = g.val(g.sigmoid(g.scalar(-1.0))).at(0);
  CHECK(sn == doctest::Approx(1.0 - sp).epsilon(1e-15));
  // saturation at infinity must be exact; the VLAD reduction tests rely on it
  CHECK(g.val(g.sigmoid(g.scalar(std::numeric_limits<double>::infinity()))).at(0) == 1.0);
}

TEST_CASE("l2_normalize") {
  Graph g;
  Var a = g.l2_normalize(g.constant({2}, {3, 4}), 0, 1e-12);
  CHECK(g.val(a).at(0) == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(g.val(a).at(1) == doctest::Approx(0.8).epsilon(1e-15));

  Var z = g.l2_normalize(g.constant({2}, {0, 0}), 0, 1e-6);
  CHECK(g.val(z).data == std::vector<double>{0, 0});

  Var s = g.l2_normalize(g.constant({2}, {-3, 4}), 0, 1e-12);
  CHECK(g.val(s).at(0) == doctest::Approx(-0.6).epsilon(1e-15));
  CHECK(g.val(s).at(1) == doctest::Approx(0.8).epsilon(1e-15));

  CHECK_THROWS_AS(g.l2_normalize(g.constant({2}, {1, 2}), 0, 0.0), std::invalid_argument);

  Rng rng(11);
  for (int trial = 0; trial < 10; ++trial) {
    Graph gg;
    Tensor x = random_tensor({3, 5}, rng);
    Var n = gg.l2_normalize(gg.constant(x), 1, 1e-12);
    for (int i = 0; i < 3; ++i) {
      double norm = 0.0;
      for (int j = 0; j < 5; ++j) norm += gg.val(n).at(i, j) * gg.val(n).at(i, j);
      CHECK(std::abs(std::sqrt(norm) - 1.0) <= 1e-12);
    }
  }
}

TEST_CASE("backward on simple graphs") {
  // loss = sum x_i^2 -> grad 2x
  Tensor x({2}, {1, 2});
  {
    Graph g;
    Var vx = g.param(x);
    g.backward(g.sum(g.mul(vx, vx)));
  }
  CHECK(x.grad == std::vector<double>{2, 4});

  // constant loss -> zero grads
  x.zero_grad();
  {
    Graph g;
    Var vx = g.param(x);
    Var loss = g.affine(g.sum(vx), 0.0, 3.0);
    g.backward(loss);
  }
  CHECK(x.grad == std::vector<double>{0, 0});

  // non-scalar loss rejected
  {
    Graph g;
    Var vx = g.param(x);
    CHECK_THROWS_AS(g.backward(vx), std::invalid_argument);
  }
}

TEST_CASE("backward twice is deterministic") {
  Rng rng(3);
  Tensor w = random_tensor({4, 3}, rng);
  Tensor b = random_tensor({3}, rng);
  Tensor x = random_tensor({2, 4}, rng);

  auto build = [&](Graph& g) {
    Var out = g.sigmoid(g.add_bias(g.matmul(g.constant(x), g.param(w)), g.param(b)));
    return g.sum(g.mul(out, out));
  };

  Graph g;
  Var loss = build(g);
  w.zero_grad();
  b.zero_grad();
  g.backward(loss);
  const auto gw1 = w.grad, gb1 = b.grad;
  w.zero_grad();
  b.zero_grad();
  g.backward(loss);
  CHECK(w.grad == gw1);
  CHECK(b.grad == gb1);
}

TEST_CASE("grad_check closed-form cases") {
  // quadratic
  Rng rng(5);
  Tensor x = random_tensor({6}, rng);
  ParamList params{{"x", &x}};
  const double err_quad = grad_check([&](Graph& g) {
    Var vx = g.param(x);
    return g.sum(g.mul(vx, vx));
  }, params);
  CHECK(err_quad < 1e-8);

  // softmax cross-entropy against a fixed one-hot target
  Tensor logits = random_tensor({1, 5}, rng);
  ParamList params2{{"logits", &logits}};
  const double err_xent = grad_check([&](Graph& g) {
    Var p = g.softmax(g.param(logits), 1);
    Var logp = g.log(g.clamp(p, 1e-12, 1.0));
    return g.affine(g.narrow(logp, 1, 2, 1), -1.0, 0.0);
  }, params2);
  CHECK(err_xent < 1e-6);
}

TEST_CASE("every op passes a finite-difference gradient check") {
  Rng rng(17);
  auto fd = [&](const char* name, ParamList params, std::function<Var(Graph&)> build) {
    INFO(name);
    const double err = grad_check(build, params, 1e-5);
    CHECK(err < 1e-4);
  };

  Tensor a = random_tensor({3, 4}, rng);
  Tensor b = random_tensor({3, 4}, rng);
  Tensor m = random_tensor({4, 5}, rng);
  Tensor bias = random_tensor({4}, rng);
  Tensor rows = random_tensor({3}, rng);
  Tensor gamma = random_tensor({4}, rng, 0.5);
  Tensor beta = random_tensor({4}, rng, 0.5);
  Tensor assign = random_tensor({5, 3}, rng);
  Tensor feat = random_tensor({5, 4}, rng);
  Tensor centers = random_tensor({3, 4}, rng);
  std::vector<double> w12(12), w15(15), w20(20), w24(24);
  for (auto* w : {&w12, &w15, &w20, &w24})
    for (auto& v : *w) v = rng.normal();

  fd("add", {{"a", &a}, {"b", &b}}, [&](Graph& g) {
    return weighted_sum(g, g.add(g.param(a), g.param(b)), w12);
  });
  fd("sub", {{"a", &a}, {"b", &b}}, [&](Graph& g) {
    return weighted_sum(g, g.sub(g.param(a), g.param(b)), w12);
  });
  fd("mul", {{"a", &a}, {"b", &b}}, [&](Graph& g) {
    return weighted_sum(g, g.mul(g.param(a), g.param(b)), w12);
  });
  fd("affine", {{"a", &a}}, [&](Graph& g) {
    return weighted_sum(g, g.affine(g.param(a), -1.7, 0.3), w12);
  });
  fd("add_bias", {{"a", &a}, {"bias", &bias}}, [&](Graph& g) {
    return weighted_sum(g, g.add_bias(g.param(a), g.param(bias)), w12);
  });
  fd("matmul", {{"a", &a}, {"m", &m}}, [&](Graph& g) {
    return weighted_sum(g, g.matmul(g.param(a), g.param(m)), w15);
  });
  fd("transpose", {{"a", &a}}, [&](Graph& g) {
    return weighted_sum(g, g.transpose(g.param(a)), w12);
  });
  fd("reshape", {{"a", &a}}, [&](Graph& g) {
    return weighted_sum(g, g.reshape(g.param(a), {2, 6}), w12);
  });
  fd("narrow", {{"a", &a}}, [&](Graph& g) {
    return weighted_sum(g, g.narrow(g.param(a), 1, 1, 2), std::vector<double>(w12.begin(), w12.begin() + 6));
  });
  fd("concat", {{"a", &a}, {"b", &b}}, [&](Graph& g) {
    return weighted_sum(g, g.concat({g.param(a), g.param(b)}, 1), w24);
  });
  fd("sigmoid", {{"a", &a}}, [&](Graph& g) { return weighted_sum(g, g.sigmoid(g.param(a)), w12); });
  fd("relu", {{"a", &a}}, [&](Graph& g) { return weighted_sum(g, g.relu(g.param(a)), w12); });
  fd("log", {{"a", &a}}, [&](Graph& g) {
    return weighted_sum(g, g.log(g.affine(g.sigmoid(g.param(a)), 1.0, 0.5)), w12);
  });
  fd("clamp", {{"a", &a}}, [&](Graph& g) {
    return weighted_sum(g, g.clamp(g.param(a), -50.0, 50.0), w12);
  });
  fd("softmax", {{"a", &a}}, [&](Graph& g) { return weighted_sum(g, g.softmax(g.param(a), 1), w12); });
  fd("l2_normalize", {{"a", &a}}, [&](Graph& g) {
    return weighted_sum(g, g.l2_normalize(g.param(a), 1, 1e-12), w12);
  });
  fd("sum", {{"a", &a}}, [&](Graph& g) { return g.sum(g.param(a)); });
  fd("sum_axis0", {{"a", &a}}, [&](Graph& g) {
    return weighted_sum(g, g.sum_axis(g.param(a), 0), std::vector<double>(w12.begin(), w12.begin() + 4));
  });
  fd("sum_axis1", {{"a", &a}}, [&](Graph& g) {
    return weighted_sum(g, g.sum_axis(g.param(a), 1), std::vector<double>(w12.begin(), w12.begin() + 3));
  });
  fd("scale_rows", {{"a", &a}, {"rows", &rows}}, [&](Graph& g) {
    return weighted_sum(g, g.scale_rows(g.param(a), g.param(rows)), w12);
  });
  fd("layer_norm", {{"a", &a}, {"gamma", &gamma}, {"beta", &beta}}, [&](Graph& g) {
    return weighted_sum(g, g.layer_norm(g.param(a), g.param(gamma), g.param(beta), 1e-6), w12);
  });
  fd("aggregate_residuals", {{"assign", &assign}, {"feat", &feat}, {"centers", &centers}},
     [&](Graph& g) {
       return weighted_sum(
           g, g.aggregate_residuals(g.param(assign), g.param(feat), g.param(centers)), w12);
     });
}

TEST_CASE("exact sum is order independent and correctly rounded") {
  // classic cancellation case
  {
    ExactSum acc;
    for (double v : {1.0, 1e100, 1.0, -1e100}) acc.add(v);
    CHECK(acc.value() == 2.0);
  }
  // order independence on random data, cross-checked against quad precision
  Rng rng(23);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> xs(64);
    for (auto& v : xs) v = rng.normal() * std::pow(10.0, rng.uniform(-6.0, 6.0));
    const double forward = exact_sum(xs.begin(), xs.end());
    __float128 quad = 0;
    for (double v : xs) quad += static_cast<__float128>(v);
    CHECK(forward == static_cast<double>(quad));
    for (int shuffle = 0; shuffle < 4; ++shuffle) {
      for (std::size_t i = xs.size(); i > 1; --i)
        std::swap(xs[i - 1], xs[static_cast<std::size_t>(rng.uniform_int(static_cast<int>(i)))]);
      CHECK(exact_sum(xs.begin(), xs.end()) == forward);
    }
  }
  // signs and zero
  {
    ExactSum acc;
    acc.add(0.25);
    acc.add(-0.25);
    CHECK(acc.value() == 0.0);
  }
}

TEST_CASE("rng streams are deterministic and normal consumes two draws") {
  Rng a(99), b(99);
  for (int i = 0; i < 100; ++i) CHECK(a.next() == b.next());
  Rng c(99);
  for (int i = 0; i < 100; ++i) c.next();
  (void)a.normal();
  c.next();
  c.next();
  CHECK(a.next() == c.next());
}

TEST_CASE("tensor invariants") {
  CHECK_THROWS_AS(Tensor({2, 2}, std::vector<double>{1, 2, 3}), std::invalid_argument);
  Tensor t({2, 3});
  CHECK(t.size() == 6);
  t.ensure_grad();
  CHECK(t.grad.size() == 6);
}
