// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "vsc/exact_sum.hpp"
#include "vsc/netvlad.hpp"
#include "vsc/rng.hpp"

using namespace vsc;

namespace {

Tensor random_frames(int n, int d, Rng& rng) {
  Tensor t({n, d});
  for (auto& v : t.data) v = rng.normal();
  return t;
}

// Straight-line oracle for soft assignment: plain double loops.
std::vector<double> assign_oracle(const Tensor& frames, const NetVladParams& p) {
  const int n = frames.rows(), j = frames.cols(), k = p.clusters;
  std::vector<double> out(static_cast<std::size_t>(n) * k);
  for (int i = 0; i < n; ++i) {
    std::vector<double> logits(static_cast<std::size_t>(k));
    for (int c = 0; c < k; ++c) {
      double acc = p.assign_b.at(c);
      for (int d = 0; d < j; ++d) acc += p.assign_w.at(c, d) * frames.at(i, d);
      logits[static_cast<std::size_t>(c)] = acc;
    }
    const double mx = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    for (auto& l : logits) {
      l = std::exp(l - mx);
      z += l;
    }
    for (int c = 0; c < k; ++c) out[static_cast<std::size_t>(i) * k + c] = logits[static_cast<std::size_t>(c)] / z;
  }
  return out;
}

// Triple-loop VLAD aggregation oracle. `exact` selects the exactly rounded
// accumulator; the plain variant sums left to right.
std::vector<double> encode_oracle_prenorm(const Tensor& frames, const NetVladParams& p,
                                          const std::vector<double>& assign, bool exact) {
  const int n = frames.rows(), j = frames.cols(), k = p.clusters;
  std::vector<double> y(static_cast<std::size_t>(k) * j, 0.0);
  for (int c = 0; c < k; ++c)
    for (int d = 0; d < j; ++d) {
      if (exact) {
        ExactSum acc;
        for (int i = 0; i < n; ++i)
          acc.add(assign[static_cast<std::size_t>(i) * k + c] * (frames.at(i, d) - p.centers.at(c, d)));
        y[static_cast<std::size_t>(c) * j + d] = acc.value();
      } else {
        double acc = 0.0;
        for (int i = 0; i < n; ++i)
          acc += assign[static_cast<std::size_t>(i) * k + c] * (frames.at(i, d) - p.centers.at(c, d));
        y[static_cast<std::size_t>(c) * j + d] = acc;
      }
    }
  return y;
}

std::vector<double> intra_normalize(std::vector<double> y, int k, int j, double eps) {
  for (int c = 0; c < k; ++c) {
    double sq = 0.0;
    for (int d = 0; d < j; ++d) {
      const double v = y[static_cast<std::size_t>(c) * j + d];
      sq += v * v;
    }
    const double norm = std::sqrt(sq);
    const double div = norm < eps ? eps : norm;
    for (int d = 0; d < j; ++d) y[static_cast<std::size_t>(c) * j + d] /= div;
  }
  return y;
}

}  // namespace

TEST_CASE("soft assignment closed forms") {
  Rng rng(1);
  SUBCASE("zero logits give uniform rows") {
    NetVladParams p = NetVladParams::init(4, 3, 8, rng);
    for (auto& v : p.assign_w.data) v = 0.0;
    for (auto& v : p.assign_b.data) v = 0.0;
    Graph g;
    Var a = netvlad_soft_assign(g, g.constant(random_frames(5, 4, rng)), p);
    for (std::size_t i = 0; i < g.val(a).data.size(); ++i)
      CHECK(g.val(a).data[i] == doctest::Approx(1.0 / 3).epsilon(1e-15));
  }
  SUBCASE("a dominant logit saturates its cluster") {
    NetVladParams p = NetVladParams::init(2, 3, 8, rng);
    for (auto& v : p.assign_w.data) v = 0.0;
    p.assign_b.at(0) = 50.0;
    p.assign_b.at(1) = 0.0;
    p.assign_b.at(2) = 0.0;
    Graph g;
    Var a = netvlad_soft_assign(g, g.constant(random_frames(1, 2, rng)), p);
    CHECK(std::abs(g.val(a).at(0, 0) - 1.0) < 1e-12);
    CHECK(std::abs(g.val(a).at(0, 1)) < 1e-12);
  }
  SUBCASE("single cluster assigns everything") {
    NetVladParams p = NetVladParams::init(3, 1, 8, rng);
    Graph g;
    Var a = netvlad_soft_assign(g, g.constant(random_frames(4, 3, rng)), p);
    for (double v : g.val(a).data) CHECK(v == 1.0);
  }
  SUBCASE("rows sum to one") {
    NetVladParams p = NetVladParams::init(6, 5, 8, rng);
    Graph g;
    Var a = netvlad_soft_assign(g, g.constant(random_frames(7, 6, rng)), p);
    for (int i = 0; i < 7; ++i) {
      double row = 0.0;
      for (int c = 0; c < 5; ++c) row += g.val(a).at(i, c);
      CHECK(std::abs(row - 1.0) <= 1e-12);
    }
  }
  SUBCASE("dimension mismatch is rejected") {
    NetVladParams p = NetVladParams::init(4, 3, 8, rng);
    Graph g;
    CHECK_THROWS_AS(netvlad_soft_assign(g, g.constant(random_frames(5, 3, rng)), p),
                    std::invalid_argument);
  }
}

TEST_CASE("encode zero-residual cases") {
  Rng rng(2);
  SUBCASE("frames at the dominant center vanish") {
    NetVladParams p = NetVladParams::init(3, 2, 8, rng);
    for (auto& v : p.assign_w.data) v = 0.0;
    p.assign_b.at(0) = 200.0;  // hard assignment to cluster 0
    p.assign_b.at(1) = 0.0;
    Tensor frames({4, 3});
    for (int i = 0; i < 4; ++i)
      for (int d = 0; d < 3; ++d) frames.at(i, d) = p.centers.at(0, d);
    Graph g;
    Var y = netvlad_encode(g, g.constant(frames), p);
    // cluster 0 residuals are exactly zero; cluster 1 gets ~0 weight
    for (double v : g.val(y).data) CHECK(std::abs(v) < 1e-12);
  }
  SUBCASE("single frame, single cluster is the normalized residual") {
    NetVladParams p = NetVladParams::init(3, 1, 8, rng);
    Tensor frames = random_frames(1, 3, rng);
    Graph g;
    Var y = netvlad_encode(g, g.constant(frames), p);
    std::vector<double> res(3);
    double norm = 0.0;
    for (int d = 0; d < 3; ++d) {
      res[static_cast<std::size_t>(d)] = frames.at(0, d) - p.centers.at(0, d);
      norm += res[static_cast<std::size_t>(d)] * res[static_cast<std::size_t>(d)];
    }
    norm = std::sqrt(norm);
    for (int d = 0; d < 3; ++d)
      CHECK(g.val(y).at(d) == doctest::Approx(res[static_cast<std::size_t>(d)] / norm).epsilon(1e-12));
  }
  SUBCASE("empty frame sequences are rejected") {
    NetVladParams p = NetVladParams::init(3, 2, 8, rng);
    Graph g;
    Tensor empty({0, 3});
    CHECK_THROWS_AS(netvlad_encode(g, g.constant(empty), p), std::invalid_argument);
  }
}

TEST_CASE("encode matches the triple-loop oracle") {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    NetVladParams p = NetVladParams::init(4, 3, 8, rng);
    Tensor frames = random_frames(6, 4, rng);
    Graph g;
    Var y = netvlad_encode(g, g.constant(frames), p);

    const auto assign = assign_oracle(frames, p);
    // exactly rounded oracle: bit-for-bit against the implementation
    const auto exact = intra_normalize(encode_oracle_prenorm(frames, p, assign, true), 3, 4, 1e-12);
    CHECK(g.val(y).data == exact);
    // plain left-to-right oracle: within 1e-12
    const auto plain = intra_normalize(encode_oracle_prenorm(frames, p, assign, false), 3, 4, 1e-12);
    for (std::size_t i = 0; i < plain.size(); ++i)
      CHECK(std::abs(g.val(y).data[i] - plain[i]) <= 1e-12);
  }
}

TEST_CASE("encode is bit-identical under frame permutation") {
  Rng rng(4);
  NetVladParams p = NetVladParams::init(5, 4, 8, rng);
  Tensor frames = random_frames(9, 5, rng);
  Graph g;
  const auto base = g.val(netvlad_encode(g, g.constant(frames), p)).data;
  std::vector<int> order(9);
  for (int i = 0; i < 9; ++i) order[static_cast<std::size_t>(i)] = i;
  for (int trial = 0; trial < 10; ++trial) {
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[static_cast<std::size_t>(rng.uniform_int(static_cast<int>(i)))]);
    Tensor shuffled({9, 5});
    for (int i = 0; i < 9; ++i)
      for (int d = 0; d < 5; ++d) shuffled.at(i, d) = frames.at(order[static_cast<std::size_t>(i)], d);
    Graph gg;
    CHECK(gg.val(netvlad_encode(gg, gg.constant(shuffled), p)).data == base);
  }
}

TEST_CASE("per-cluster slices have unit norm when above eps") {
  Rng rng(5);
  NetVladParams p = NetVladParams::init(4, 3, 8, rng);
  Tensor frames = random_frames(6, 4, rng);
  Graph g;
  Var y = netvlad_encode(g, g.constant(frames), p);
  for (int c = 0; c < 3; ++c) {
    double norm = 0.0;
    for (int d = 0; d < 4; ++d) {
      const double v = g.val(y).at(c * 4 + d);
      norm += v * v;
    }
    norm = std::sqrt(norm);
    CHECK(norm <= 1.0 + 1e-12);
    CHECK(std::abs(norm - 1.0) <= 1e-12);
  }
}

TEST_CASE("context gate closed forms") {
  Rng rng(6);
  Graph g;
  Tensor y = random_frames(1, 4, rng);
  SUBCASE("zero gate halves the input") {
    Var z = context_gate(g, g.constant(y), g.constant(Tensor({4, 4})), g.constant(Tensor({4})));
    for (int d = 0; d < 4; ++d)
      CHECK(g.val(z).at(0, d) == doctest::Approx(0.5 * y.at(0, d)).epsilon(1e-15));
  }
  SUBCASE("zero input stays zero") {
    Tensor w = random_frames(4, 4, rng);
    Var z = context_gate(g, g.constant(Tensor({1, 4})), g.constant(w), g.constant(Tensor({4})));
    for (double v : g.val(z).data) CHECK(v == 0.0);
  }
  SUBCASE("saturated gate passes the input through") {
    Var z = context_gate(g, g.constant(y), g.constant(Tensor({4, 4})),
                         g.constant(Tensor::full({4}, 100.0)));
    for (int d = 0; d < 4; ++d) CHECK(std::abs(g.val(z).at(0, d) - y.at(0, d)) < 1e-12);
  }
}

TEST_CASE("gated forward: zero params, determinism, straight-line oracle") {
  Rng rng(7);
  SUBCASE("all-zero parameters predict one half everywhere") {
    GatedNetVladModel m = GatedNetVladModel::init(4, 3, 8, 5, 2, rng);
    for (auto& e : m.params())
      for (auto& v : e.tensor->data) v = 0.0;
    Graph g;
    Var probs = m.forward_probs(g, random_frames(6, 4, rng));
    for (double v : g.val(probs).data) CHECK(v == 0.5);
  }

  SUBCASE("same seed gives identical predictions") {
    GatedNetVladModel a = GatedNetVladModel::init(4, 3, 8, 5, 2, rng);
    Rng rng2(7);
    (void)rng2;
    Tensor frames = random_frames(6, 4, rng);
    Graph g1, g2;
    const auto p1 = g1.val(a.forward_probs(g1, frames)).data;
    const auto p2 = g2.val(a.forward_probs(g2, frames)).data;
    CHECK(p1 == p2);
  }

  SUBCASE("full forward matches an independent straight-line reimplementation") {
    const int J = 4, K = 3, H = 8, C = 5, E = 2;
    GatedNetVladModel m = GatedNetVladModel::init(J, K, H, C, E, rng);
    Tensor frames = random_frames(6, J, rng);
    Graph g;
    const auto got = g.val(m.forward_probs(g, frames)).data;

    // no-tape reimplementation in plain loops
    const auto assign = assign_oracle(frames, m.vlad);
    auto code = intra_normalize(encode_oracle_prenorm(frames, m.vlad, assign, false), K, J, 1e-12);
    std::vector<double> hidden(H);
    for (int h = 0; h < H; ++h) {
      double acc = m.vlad.hidden_b.at(h);
      for (int i = 0; i < K * J; ++i) acc += code[static_cast<std::size_t>(i)] * m.vlad.hidden_w.at(i, h);
      hidden[static_cast<std::size_t>(h)] = acc;
    }
    auto sigmoid = [](double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); };
    std::vector<double> gated(H);
    for (int h = 0; h < H; ++h) {
      double acc = m.vlad.cg_b.at(h);
      for (int i = 0; i < H; ++i) acc += hidden[static_cast<std::size_t>(i)] * m.vlad.cg_w.at(i, h);
      gated[static_cast<std::size_t>(h)] = sigmoid(acc) * hidden[static_cast<std::size_t>(h)];
    }
    std::vector<double> logits(C);
    for (int c = 0; c < C; ++c) {
      std::vector<double> el(E), gl(E);
      for (int e = 0; e < E; ++e) {
        double ea = m.moe.expert_b.at(c * E + e), ga = m.moe.gate_b.at(c * E + e);
        for (int h = 0; h < H; ++h) {
          ea += gated[static_cast<std::size_t>(h)] * m.moe.expert_w.at(h, c * E + e);
          ga += gated[static_cast<std::size_t>(h)] * m.moe.gate_w.at(h, c * E + e);
        }
        el[static_cast<std::size_t>(e)] = ea;
        gl[static_cast<std::size_t>(e)] = ga;
      }
      const double mx = *std::max_element(gl.begin(), gl.end());
      double z = 0.0;
      for (auto& v : gl) {
        v = std::exp(v - mx);
        z += v;
      }
      double acc = 0.0;
      for (int e = 0; e < E; ++e) acc += gl[static_cast<std::size_t>(e)] / z * el[static_cast<std::size_t>(e)];
      logits[static_cast<std::size_t>(c)] = acc;
    }
    std::vector<double> expected(C);
    for (int c = 0; c < C; ++c) {
      double acc = m.out_cg_b.at(c);
      for (int i = 0; i < C; ++i) acc += logits[static_cast<std::size_t>(i)] * m.out_cg_w.at(i, c);
      expected[static_cast<std::size_t>(c)] = sigmoid(sigmoid(acc) * logits[static_cast<std::size_t>(c)]);
    }
    REQUIRE(got.size() == expected.size());
    for (std::size_t i = 0; i < got.size(); ++i) CHECK(std::abs(got[i] - expected[i]) <= 1e-12);
  }
}

TEST_CASE("gated netvlad gradients pass finite differences") {
  Rng rng(8);
  GatedNetVladModel m = GatedNetVladModel::init(3, 2, 4, 2, 2, rng);
  Tensor frames = random_frames(5, 3, rng);
  const std::vector<double> labels{1.0, 0.0};
  ParamList params = m.params();
  const double err = grad_check([&](Graph& g) {
    return bce_loss(g, m.forward_probs(g, frames), labels);
  }, params);
  CHECK(err < 1e-4);
}
