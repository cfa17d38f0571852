// SPDX-License-Identifier: Apache-2.0
//
// MAP@K over per-class ranked segment predictions. Ordering is always by
// descending score with ties broken by ascending segment id, so rankings
// and files are deterministic.

#pragma once

#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace vsc {

struct RankedItem {
  std::string segment;
  double score;

  friend bool operator==(const RankedItem&, const RankedItem&) = default;
};

// class id -> items ordered by (score desc, segment asc), truncated to K
using PredictionTable = std::map<int, std::vector<RankedItem>>;

struct GroundTruth {
  std::map<int, std::set<std::string>> positives;
};

// Sorts by (score desc, segment asc) and truncates to k.
std::vector<RankedItem> rank_items(std::vector<RankedItem> items, int k);
// Single pass with a size-k heap; equals rank_items exactly.
std::vector<RankedItem> rank_items_streaming(const std::vector<RankedItem>& items, int k);

// sum_{j<=k} P(j) rel(j) / N_c over the first k entries of an ordered
// ranking, with N_c the total positive count for the class.
double average_precision_at_k(const std::vector<RankedItem>& ranking,
                              const std::set<std::string>& truth, int k);

// Unweighted mean of per-class AP over classes with at least one positive.
// Classes missing from the table score zero.
double map_at_k(const PredictionTable& predictions, const GroundTruth& truth, int k);

// Text format: one "class<TAB>segment<TAB>score" line per item, classes
// ascending, items in rank order. Scores are printed with round-trip
// precision.
void write_predictions(const PredictionTable& table, const std::filesystem::path& path);
PredictionTable read_predictions(const std::filesystem::path& path);

}  // namespace vsc
