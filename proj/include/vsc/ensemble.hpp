// SPDX-License-Identifier: Apache-2.0
//
// Rank fusion of prediction tables and Gaussian-process Bayesian
// optimization of the fusion weights against local MAP.

#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "vsc/metrics.hpp"

namespace vsc {

// Score(v) = sum over models i that rank v at position j of w[i]/j, per
// class; candidates with zero support are dropped. Weights are projected to
// non-negative values and normalized to sum one first, so any positive
// rescaling fuses identically.
PredictionTable rank_fusion(const std::vector<PredictionTable>& models,
                            const std::vector<double>& weights, int k);

std::vector<double> normalize_weights(std::vector<double> weights);

struct GpSurrogate {
  std::vector<std::vector<double>> points;
  std::vector<double> values;
  double length_scale = 0.2;
  double signal_var = 1.0;
  double noise_var = 1e-6;
  // Cholesky factor of K + (noise + jitter) I, row-major lower triangle
  std::vector<double> chol;
  std::vector<double> alpha;  // (K + noise I)^-1 y
};

// Squared-exponential kernel, fixed hyperparameters, 1e-8 jitter on the
// diagonal to keep the factorization positive definite.
GpSurrogate gp_fit(std::vector<std::vector<double>> points, std::vector<double> values,
                   double length_scale = 0.2, double signal_var = 1.0, double noise_var = 1e-6);

// Posterior (mean, variance) at x under a zero-mean prior.
std::pair<double, double> gp_posterior(const GpSurrogate& gp, const std::vector<double>& x);

// Expected improvement over `best` for maximization; zero when the
// posterior is certain and not above best.
double expected_improvement(const GpSurrogate& gp, const std::vector<double>& x, double best);

struct BayesOptResult {
  std::vector<double> best_point;
  double best_value = 0.0;
  // every evaluated (point, value) in order
  std::vector<std::pair<std::vector<double>, double>> trajectory;
};

// Maximizes objective over the box [lo, hi]: n_init space-filling samples,
// then n_iter rounds of GP fit + EI argmax over random candidates.
// Deterministic for a given seed. n_init must be at least 2.
BayesOptResult bayes_maximize(const std::function<double(const std::vector<double>&)>& objective,
                              const std::vector<double>& lo, const std::vector<double>& hi,
                              int n_init, int n_iter, std::uint64_t seed);

struct TuneResult {
  std::vector<double> weights;      // normalized, best observed
  double best_map = 0.0;            // local MAP of those weights
  std::vector<double> single_maps;  // standalone MAP per model
  std::vector<std::pair<std::vector<double>, double>> trajectory;
};

// Four-step weight search: per-model search boxes sized from standalone
// local MAPs, initial samples, then GP+EI proposals, best observed weights
// returned.
TuneResult tune_weights(const std::vector<PredictionTable>& models, const GroundTruth& truth, int k,
                        int n_init, int n_iter, std::uint64_t seed);

}  // namespace vsc
