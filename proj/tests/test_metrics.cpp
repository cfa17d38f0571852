// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <vector>

#include "vsc/metrics.hpp"
#include "vsc/rng.hpp"

using namespace vsc;

namespace {

// Independent AP oracle: recomputes precision at each cutoff by rescanning
// the prefix, no running counters.
double ap_oracle(const std::vector<RankedItem>& ranking, const std::set<std::string>& truth, int k) {
  if (truth.empty()) return 0.0;
  double total = 0.0;
  const int limit = std::min<int>(k, static_cast<int>(ranking.size()));
  for (int cut = 1; cut <= limit; ++cut) {
    if (!truth.count(ranking[static_cast<std::size_t>(cut - 1)].segment)) continue;
    int relevant = 0;
    for (int i = 0; i < cut; ++i)
      if (truth.count(ranking[static_cast<std::size_t>(i)].segment)) ++relevant;
    total += static_cast<double>(relevant) / cut;
  }
  return total / static_cast<double>(truth.size());
}

std::vector<RankedItem> relevance_pattern(const std::vector<int>& rel) {
  std::vector<RankedItem> items;
  for (std::size_t i = 0; i < rel.size(); ++i)
    items.push_back({(rel[i] ? "p" : "n") + std::to_string(i), 1.0 - 0.01 * static_cast<double>(i)});
  return items;
}

std::set<std::string> positives_of(const std::vector<RankedItem>& items, const std::vector<int>& rel,
                                   int extra_unranked = 0) {
  std::set<std::string> t;
  for (std::size_t i = 0; i < rel.size(); ++i)
    if (rel[i]) t.insert(items[i].segment);
  for (int i = 0; i < extra_unranked; ++i) t.insert("unranked" + std::to_string(i));
  return t;
}

}  // namespace

TEST_CASE("average precision closed forms") {
  SUBCASE("pattern [1,0,1] with two positives at K=3 gives 5/6") {
    const std::vector<int> rel{1, 0, 1};
    const auto items = relevance_pattern(rel);
    CHECK(average_precision_at_k(items, positives_of(items, rel), 3) ==
          doctest::Approx(5.0 / 6).epsilon(1e-15));
  }
  SUBCASE("all relevant with N_c == K is exactly one") {
    const std::vector<int> rel{1, 1, 1, 1};
    const auto items = relevance_pattern(rel);
    CHECK(average_precision_at_k(items, positives_of(items, rel), 4) == 1.0);
  }
  SUBCASE("nothing relevant in the top K is zero") {
    const std::vector<int> rel{0, 0, 0};
    const auto items = relevance_pattern(rel);
    CHECK(average_precision_at_k(items, positives_of(items, rel, 2), 3) == 0.0);
  }
  SUBCASE("a perfect ranking can score below one when N_c exceeds K") {
    // as printed: the denominator counts all positives, even beyond K
    const std::vector<int> rel{1, 1};
    const auto items = relevance_pattern(rel);
    const auto truth = positives_of(items, rel, 3);  // N_c = 5, K = 2
    const double ap = average_precision_at_k(items, truth, 2);
    CHECK(ap == doctest::Approx(2.0 / 5).epsilon(1e-15));
    CHECK(ap <= static_cast<double>(std::min<std::size_t>(2, truth.size())) / static_cast<double>(truth.size()));
  }
}

TEST_CASE("map closed forms") {
  const std::vector<int> perfect{1, 1};
  const std::vector<int> empty{0, 0};
  const auto items_a = relevance_pattern(perfect);
  const auto items_b = relevance_pattern(empty);
  PredictionTable table;
  table[0] = items_a;
  table[1] = items_b;
  GroundTruth truth;
  truth.positives[0] = positives_of(items_a, perfect);
  truth.positives[1] = positives_of(items_b, empty, 2);
  CHECK(map_at_k(table, truth, 2) == doctest::Approx(0.5).epsilon(1e-15));

  GroundTruth single;
  single.positives[0] = truth.positives[0];
  PredictionTable one;
  one[0] = items_a;
  CHECK(map_at_k(one, single, 2) == average_precision_at_k(items_a, single.positives[0], 2));

  // classes without positives are excluded from the mean
  GroundTruth with_empty = single;
  with_empty.positives[7] = {};
  CHECK(map_at_k(one, with_empty, 2) == map_at_k(one, single, 2));

  // classes with positives but no ranking count as zero
  GroundTruth with_missing = single;
  with_missing.positives[9] = {"zz"};
  CHECK(map_at_k(one, with_missing, 2) == doctest::Approx(0.5 * map_at_k(one, single, 2)).epsilon(1e-15));
}

TEST_CASE("random instances match the exhaustive oracle") {
  Rng rng(42);
  for (int trial = 0; trial < 50; ++trial) {
    const int classes = 1 + rng.uniform_int(10);
    const int segments = 10 + rng.uniform_int(91);
    const int k = 1 + rng.uniform_int(segments);
    PredictionTable table;
    GroundTruth truth;
    double expected = 0.0;
    int counted = 0;
    for (int c = 0; c < classes; ++c) {
      std::vector<RankedItem> items;
      for (int s = 0; s < segments; ++s)
        items.push_back({"s" + std::to_string(s), rng.uniform()});
      auto ranked = rank_items(items, k);
      std::set<std::string> pos;
      for (int s = 0; s < segments; ++s)
        if (rng.uniform() < 0.2) pos.insert("s" + std::to_string(s));
      table[c] = ranked;
      truth.positives[c] = pos;
      if (!pos.empty()) {
        expected += ap_oracle(ranked, pos, k);
        ++counted;
      }
    }
    if (counted == 0) continue;
    expected /= counted;
    CHECK(std::abs(map_at_k(table, truth, k) - expected) <= 1e-12);
  }
}

TEST_CASE("moving a relevant item up one rank never lowers AP") {
  Rng rng(7);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 12;
    std::vector<int> rel(static_cast<std::size_t>(n));
    for (auto& r : rel) r = rng.uniform() < 0.4 ? 1 : 0;
    auto items = relevance_pattern(rel);
    const auto truth = positives_of(items, rel);
    if (truth.empty()) continue;
    const int k = 1 + rng.uniform_int(n);
    const double base = average_precision_at_k(items, truth, k);
    // find a relevant item with a non-relevant predecessor and swap
    for (int i = 1; i < n; ++i) {
      if (rel[static_cast<std::size_t>(i)] && !rel[static_cast<std::size_t>(i - 1)]) {
        auto swapped = items;
        std::swap(swapped[static_cast<std::size_t>(i)], swapped[static_cast<std::size_t>(i - 1)]);
        CHECK(average_precision_at_k(swapped, truth, k) >= base - 1e-15);
        break;
      }
    }
  }
}

TEST_CASE("streaming top-k equals the naive ranking exactly") {
  Rng rng(9);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 1 + rng.uniform_int(200);
    const int k = 1 + rng.uniform_int(60);
    std::vector<RankedItem> items;
    for (int i = 0; i < n; ++i) {
      // duplicate scores on purpose to exercise the tie rule
      const double score = std::floor(rng.uniform() * 10) / 10.0;
      items.push_back({"seg" + std::to_string(i), score});
    }
    const auto naive = rank_items(items, k);
    const auto streaming = rank_items_streaming(items, k);
    REQUIRE(naive.size() == streaming.size());
    for (std::size_t i = 0; i < naive.size(); ++i) {
      CHECK(naive[i].segment == streaming[i].segment);
      CHECK(naive[i].score == streaming[i].score);
    }
  }
}

TEST_CASE("scores tie-break by ascending segment id") {
  std::vector<RankedItem> items{{"b", 1.0}, {"a", 1.0}, {"c", 2.0}};
  const auto ranked = rank_items(items, 3);
  CHECK(ranked[0].segment == "c");
  CHECK(ranked[1].segment == "a");
  CHECK(ranked[2].segment == "b");
}

TEST_CASE("prediction file round trip") {
  PredictionTable table;
  table[3] = {{"v1:5", 0.75}, {"v2:0", 0.25}};
  table[1] = {{"v9:10", 1.0 / 3.0}};
  const auto path = std::filesystem::temp_directory_path() / "vsc_preds_test.tsv";
  write_predictions(table, path);
  const auto back = read_predictions(path);
  REQUIRE(back.size() == 2);
  CHECK(back.at(1)[0].segment == "v9:10");
  CHECK(back.at(1)[0].score == 1.0 / 3.0);  // %.17g survives the round trip
  CHECK(back.at(3)[1].score == 0.25);
  std::filesystem::remove(path);
}

TEST_CASE("prediction files violating the ranking invariants are rejected") {
  namespace fs = std::filesystem;
  const auto path = fs::temp_directory_path() / "vsc_preds_bad.tsv";
  {
    std::ofstream out(path);
    out << "0\ta\t0.3\n0\tb\t0.9\n";  // increasing scores
  }
  CHECK_THROWS(read_predictions(path));
  {
    std::ofstream out(path, std::ios::trunc);
    out << "0\ta\t0.9\n0\ta\t0.3\n";  // duplicate segment
  }
  CHECK_THROWS(read_predictions(path));
  {
    std::ofstream out(path, std::ios::trunc);
    out << "0\ta\tnot-a-number\n";
  }
  CHECK_THROWS(read_predictions(path));
  fs::remove(path);
}
