// SPDX-License-Identifier: Apache-2.0

#include "vsc/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <queue>
#include <stdexcept>

#include "vsc/errors.hpp"

namespace vsc {

namespace {

// rank order: best first
bool better(const RankedItem& a, const RankedItem& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.segment < b.segment;
}

}  // namespace

std::vector<RankedItem> rank_items(std::vector<RankedItem> items, int k) {
  if (k < 1) throw std::invalid_argument("rank_items: k must be >= 1");
  std::sort(items.begin(), items.end(), better);
  if (static_cast<int>(items.size()) > k) items.resize(static_cast<std::size_t>(k));
  return items;
}

std::vector<RankedItem> rank_items_streaming(const std::vector<RankedItem>& items, int k) {
  if (k < 1) throw std::invalid_argument("rank_items_streaming: k must be >= 1");
  // with better() as the comparator the priority queue keeps the weakest
  // item on top
  auto weakest_on_top = [](const RankedItem& a, const RankedItem& b) { return better(a, b); };
  std::priority_queue<RankedItem, std::vector<RankedItem>, decltype(weakest_on_top)> heap(weakest_on_top);
  for (const auto& it : items) {
    if (static_cast<int>(heap.size()) < k) {
      heap.push(it);
    } else if (better(it, heap.top())) {
      heap.pop();
      heap.push(it);
    }
  }
  std::vector<RankedItem> out(heap.size());
  for (std::size_t i = heap.size(); i-- > 0;) {
    out[i] = heap.top();
    heap.pop();
  }
  return out;
}

double average_precision_at_k(const std::vector<RankedItem>& ranking,
                              const std::set<std::string>& truth, int k) {
  if (k < 1) throw std::invalid_argument("average_precision_at_k: k must be >= 1");
  if (truth.empty()) return 0.0;
  const int limit = std::min<int>(k, static_cast<int>(ranking.size()));
  int hits = 0;
  double ap = 0.0;
  for (int i = 0; i < limit; ++i) {
    if (truth.count(ranking[static_cast<std::size_t>(i)].segment)) {
      ++hits;
      ap += static_cast<double>(hits) / (i + 1);
    }
  }
  return ap / static_cast<double>(truth.size());
}

double map_at_k(const PredictionTable& predictions, const GroundTruth& truth, int k) {
  static const std::vector<RankedItem> kEmpty;
  double total = 0.0;
  int classes = 0;
  for (const auto& [class_id, positives] : truth.positives) {
    if (positives.empty()) continue;  // no positives, class excluded from the mean
    auto it = predictions.find(class_id);
    total += average_precision_at_k(it == predictions.end() ? kEmpty : it->second, positives, k);
    ++classes;
  }
  return classes == 0 ? 0.0 : total / classes;
}

void write_predictions(const PredictionTable& table, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  char buf[64];
  for (const auto& [class_id, items] : table) {
    for (const auto& item : items) {
      std::snprintf(buf, sizeof(buf), "%.17g", item.score);
      out << class_id << '\t' << item.segment << '\t' << buf << '\n';
    }
  }
  if (!out) throw FormatError("write failed: " + path.string());
}

PredictionTable read_predictions(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  PredictionTable table;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto t1 = line.find('\t');
    const auto t2 = t1 == std::string::npos ? std::string::npos : line.find('\t', t1 + 1);
    if (t2 == std::string::npos)
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": expected class<TAB>segment<TAB>score");
    int class_id = 0;
    const auto cls = std::from_chars(line.data(), line.data() + t1, class_id);
    if (cls.ec != std::errc() || cls.ptr != line.data() + t1)
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": bad class id");
    const std::string segment = line.substr(t1 + 1, t2 - t1 - 1);
    double score = 0.0;
    try {
      score = std::stod(line.substr(t2 + 1));
    } catch (const std::exception&) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": bad score");
    }
    table[class_id].push_back({segment, score});
  }
  // rankings must be ordered and free of duplicate segments
  for (const auto& [class_id, items] : table) {
    std::set<std::string> seen;
    for (std::size_t i = 0; i < items.size(); ++i) {
      if (i > 0 && items[i].score > items[i - 1].score)
        throw FormatError(path.string() + ": class " + std::to_string(class_id) +
                          " scores increase at rank " + std::to_string(i + 1));
      if (!seen.insert(items[i].segment).second)
        throw FormatError(path.string() + ": class " + std::to_string(class_id) +
                          " lists segment " + items[i].segment + " twice");
    }
  }
  return table;
}

}  // namespace vsc
