// SPDX-License-Identifier: Apache-2.0

#include "vsc/ensemble.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

#include "vsc/rng.hpp"

namespace vsc {

std::vector<double> normalize_weights(std::vector<double> weights) {
  double total = 0.0;
  for (auto& w : weights) {
    if (w < 0.0) w = 0.0;
    total += w;
  }
  if (total <= 0.0) throw std::invalid_argument("weights: at least one must be positive");
  for (auto& w : weights) w /= total;
  return weights;
}

PredictionTable rank_fusion(const std::vector<PredictionTable>& models,
                            const std::vector<double>& weights, int k) {
  if (models.empty()) throw std::invalid_argument("rank_fusion: no models");
  if (models.size() != weights.size())
    throw std::invalid_argument("rank_fusion: " + std::to_string(weights.size()) + " weights for " +
                                std::to_string(models.size()) + " models");
  const std::vector<double> w = normalize_weights(weights);

  std::set<int> classes;
  for (const auto& m : models)
    for (const auto& [cls, items] : m) {
      if (items.empty()) throw std::invalid_argument("rank_fusion: empty ranking for class " + std::to_string(cls));
      classes.insert(cls);
    }

  PredictionTable fused;
  for (int cls : classes) {
    std::map<std::string, double> score;  // ordered map keeps accumulation deterministic
    for (std::size_t m = 0; m < models.size(); ++m) {
      if (w[m] == 0.0) continue;
      auto it = models[m].find(cls);
      if (it == models[m].end()) continue;
      const auto& items = it->second;
      for (std::size_t j = 0; j < items.size(); ++j)
        score[items[j].segment] += w[m] / static_cast<double>(j + 1);
    }
    std::vector<RankedItem> items;
    items.reserve(score.size());
    for (const auto& [segment, s] : score)
      if (s > 0.0) items.push_back({segment, s});
    fused[cls] = rank_items(std::move(items), k);
  }
  return fused;
}

namespace {

double sq_exp_kernel(const std::vector<double>& a, const std::vector<double>& b, double length_scale,
                     double signal_var) {
  double d2 = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    d2 += d * d;
  }
  return signal_var * std::exp(-0.5 * d2 / (length_scale * length_scale));
}

constexpr double kJitter = 1e-8;

// In-place Cholesky of a row-major symmetric matrix; keeps the lower
// triangle.
void cholesky(std::vector<double>& a, int n) {
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j <= i; ++j) {
      double s = a[static_cast<std::size_t>(i) * n + j];
      for (int p = 0; p < j; ++p)
        s -= a[static_cast<std::size_t>(i) * n + p] * a[static_cast<std::size_t>(j) * n + p];
      if (i == j) {
        if (s <= 0.0) throw std::runtime_error("gp_fit: kernel matrix not positive definite");
        a[static_cast<std::size_t>(i) * n + j] = std::sqrt(s);
      } else {
        a[static_cast<std::size_t>(i) * n + j] = s / a[static_cast<std::size_t>(j) * n + j];
      }
    }
    for (int j = i + 1; j < n; ++j) a[static_cast<std::size_t>(i) * n + j] = 0.0;
  }
}

// Solves L y = b in place.
void solve_lower(const std::vector<double>& chol, int n, std::vector<double>& b) {
  for (int i = 0; i < n; ++i) {
    double s = b[static_cast<std::size_t>(i)];
    for (int j = 0; j < i; ++j) s -= chol[static_cast<std::size_t>(i) * n + j] * b[static_cast<std::size_t>(j)];
    b[static_cast<std::size_t>(i)] = s / chol[static_cast<std::size_t>(i) * n + i];
  }
}

// Solves L^T y = b in place.
void solve_upper(const std::vector<double>& chol, int n, std::vector<double>& b) {
  for (int i = n - 1; i >= 0; --i) {
    double s = b[static_cast<std::size_t>(i)];
    for (int j = i + 1; j < n; ++j) s -= chol[static_cast<std::size_t>(j) * n + i] * b[static_cast<std::size_t>(j)];
    b[static_cast<std::size_t>(i)] = s / chol[static_cast<std::size_t>(i) * n + i];
  }
}

constexpr double kTwoPi = 6.283185307179586476925286766559;

double standard_normal_pdf(double z) { return std::exp(-0.5 * z * z) / std::sqrt(kTwoPi); }
double standard_normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

}  // namespace

GpSurrogate gp_fit(std::vector<std::vector<double>> points, std::vector<double> values,
                   double length_scale, double signal_var, double noise_var) {
  if (points.size() != values.size() || points.empty())
    throw std::invalid_argument("gp_fit: need matching, non-empty observations");
  GpSurrogate gp;
  gp.points = std::move(points);
  gp.values = std::move(values);
  gp.length_scale = length_scale;
  gp.signal_var = signal_var;
  gp.noise_var = noise_var;
  const int n = static_cast<int>(gp.points.size());
  gp.chol.assign(static_cast<std::size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      gp.chol[static_cast<std::size_t>(i) * n + j] =
          sq_exp_kernel(gp.points[static_cast<std::size_t>(i)], gp.points[static_cast<std::size_t>(j)],
                        length_scale, signal_var) +
          ((i == j) ? noise_var + kJitter : 0.0);
  cholesky(gp.chol, n);
  gp.alpha = gp.values;
  solve_lower(gp.chol, n, gp.alpha);
  solve_upper(gp.chol, n, gp.alpha);
  return gp;
}

std::pair<double, double> gp_posterior(const GpSurrogate& gp, const std::vector<double>& x) {
  const int n = static_cast<int>(gp.points.size());
  std::vector<double> kx(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i)
    kx[static_cast<std::size_t>(i)] =
        sq_exp_kernel(gp.points[static_cast<std::size_t>(i)], x, gp.length_scale, gp.signal_var);
  double mean = 0.0;
  for (int i = 0; i < n; ++i) mean += kx[static_cast<std::size_t>(i)] * gp.alpha[static_cast<std::size_t>(i)];
  std::vector<double> v = kx;
  solve_lower(gp.chol, n, v);
  double reduction = 0.0;
  for (double e : v) reduction += e * e;
  const double variance = std::max(0.0, gp.signal_var - reduction);
  return {mean, variance};
}

double expected_improvement(const GpSurrogate& gp, const std::vector<double>& x, double best) {
  const auto [mean, variance] = gp_posterior(gp, x);
  const double sigma = std::sqrt(variance);
  if (sigma < 1e-12) return std::max(0.0, mean - best);
  const double z = (mean - best) / sigma;
  return (mean - best) * standard_normal_cdf(z) + sigma * standard_normal_pdf(z);
}

BayesOptResult bayes_maximize(const std::function<double(const std::vector<double>&)>& objective,
                              const std::vector<double>& lo, const std::vector<double>& hi,
                              int n_init, int n_iter, std::uint64_t seed) {
  if (n_init < 2) throw std::invalid_argument("bayes_maximize: need at least 2 initial samples");
  if (lo.size() != hi.size() || lo.empty()) throw std::invalid_argument("bayes_maximize: bad bounds");
  const std::size_t dim = lo.size();
  for (std::size_t d = 0; d < dim; ++d)
    if (!(lo[d] < hi[d])) throw std::invalid_argument("bayes_maximize: empty box");

  Rng rng(seed);
  auto sample_box = [&]() {
    std::vector<double> x(dim);
    for (std::size_t d = 0; d < dim; ++d) x[d] = rng.uniform(lo[d], hi[d]);
    return x;
  };
  // the GP works on unit-box coordinates so the fixed length scale is
  // meaningful regardless of the physical bounds
  auto to_unit = [&](const std::vector<double>& x) {
    std::vector<double> u(dim);
    for (std::size_t d = 0; d < dim; ++d) u[d] = (x[d] - lo[d]) / (hi[d] - lo[d]);
    return u;
  };

  BayesOptResult result;
  std::vector<std::vector<double>> unit_points;
  std::vector<double> values;
  auto evaluate = [&](const std::vector<double>& x) {
    const double y = objective(x);
    unit_points.push_back(to_unit(x));
    values.push_back(y);
    result.trajectory.emplace_back(x, y);
    if (result.best_point.empty() || y > result.best_value) {
      result.best_point = x;
      result.best_value = y;
    }
  };

  for (int i = 0; i < n_init; ++i) evaluate(sample_box());

  constexpr int kCandidates = 256;
  for (int it = 0; it < n_iter; ++it) {
    const GpSurrogate gp = gp_fit(unit_points, values);
    double best_observed = *std::max_element(values.begin(), values.end());
    std::vector<double> best_cand;
    double best_ei = -1.0;
    for (int c = 0; c < kCandidates; ++c) {
      std::vector<double> x = sample_box();
      const double ei = expected_improvement(gp, to_unit(x), best_observed);
      if (ei > best_ei) {
        best_ei = ei;
        best_cand = std::move(x);
      }
    }
    evaluate(best_cand);
  }
  return result;
}

TuneResult tune_weights(const std::vector<PredictionTable>& models, const GroundTruth& truth, int k,
                        int n_init, int n_iter, std::uint64_t seed) {
  if (models.empty()) throw std::invalid_argument("tune_weights: no models");
  TuneResult result;

  // step 1: size each weight's search region from the model's standalone
  // local MAP
  for (const auto& m : models) result.single_maps.push_back(map_at_k(m, truth, k));
  double total = 0.0;
  for (double s : result.single_maps) total += s;
  const std::size_t n = models.size();
  std::vector<double> lo(n), hi(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double share = total > 0.0 ? result.single_maps[i] / total : 1.0 / static_cast<double>(n);
    lo[i] = 0.5 * share;
    hi[i] = 1.5 * share;
  }

  if (n == 1) {
    result.weights = {1.0};
    result.best_map = result.single_maps[0];
    result.trajectory.emplace_back(result.weights, result.best_map);
    return result;
  }

  // steps 2-4: evaluate local MAP of the fused table, propose with GP+EI,
  // repeat for the iteration budget
  auto objective = [&](const std::vector<double>& w) {
    return map_at_k(rank_fusion(models, w, k), truth, k);
  };
  BayesOptResult bo = bayes_maximize(objective, lo, hi, n_init, n_iter, seed);
  result.weights = normalize_weights(bo.best_point);
  result.best_map = bo.best_value;
  result.trajectory = std::move(bo.trajectory);

  // the standalone scores from step 1 are observations too: when no mixture
  // beats the best single model, ship that model alone
  for (std::size_t i = 0; i < n; ++i) {
    if (result.single_maps[i] > result.best_map) {
      result.best_map = result.single_maps[i];
      result.weights.assign(n, 0.0);
      result.weights[i] = 1.0;
    }
  }
  return result;
}

}  // namespace vsc
