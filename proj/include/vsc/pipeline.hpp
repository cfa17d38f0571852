// SPDX-License-Identifier: Apache-2.0
//
// End-to-end workflows: pretraining on video-level labels, fine-tuning on
// verified segment labels with holdout-MAP checkpoint selection, shift-
// averaged inference, evaluation, fusion, and weight tuning.

#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "vsc/dataio.hpp"
#include "vsc/metrics.hpp"
#include "vsc/model.hpp"

namespace vsc {

// Adaptive-moment optimizer; state is positional over the parameter list.
class AdamOptimizer {
 public:
  explicit AdamOptimizer(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : beta1_(beta1), beta2_(beta2), eps_(eps) {}

  // Applies one update from the tensors' grad buffers and zeroes them.
  void step(const ParamList& params, double lr);

 private:
  double beta1_, beta2_, eps_;
  long long t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

struct TrainConfig {
  ModelFamily family = ModelFamily::kNetVlad;
  AggMode agg = AggMode::kMean;
  int batch_size = 32;
  double learning_rate = 1e-4;
  double decay = 0.9;
  long long decay_interval = 10000;  // examples per decay factor
  int steps = 2000;
  std::uint64_t seed = 1;
  double temperature = 3.0;

  int frame_samples = 20;  // frames drawn per video during pretraining
  SampleMode sample_mode = SampleMode::kWithReplacement;
  int eval_interval = 100;  // fine-tuning holdout evaluations
  int eval_topk = 1000;
  int log_interval = 50;

  void validate() const;
};

// lr0 * decay^(examples_seen / decay_interval), real-valued exponent.
double lr_at(const TrainConfig& config, long long examples_seen);

struct LossLogEntry {
  int step;
  long long examples_seen;
  double lr;
  double loss;
};

struct Dataset {
  std::vector<FrameFeatureSequence> videos;
  std::map<std::string, std::size_t> by_id;
  std::vector<SegmentLabel> segments;

  const FrameFeatureSequence& video(const std::string& id) const;
};

// Loads "<split>_features" and, when present, "<split>_segments".
Dataset load_split(const DatasetManifest& manifest, const std::string& split);

GroundTruth truth_from_segments(const std::vector<SegmentLabel>& segments);

struct TrainResult {
  std::vector<LossLogEntry> log;
};

// Minimizes the model's video-level loss over sampled frames. Appends
// "step<TAB>examples<TAB>lr<TAB>loss" lines to log_path when given.
TrainResult pretrain(Model& model, const Dataset& data, const TrainConfig& config,
                     const std::string& log_path = "");

struct FinetuneResult {
  std::vector<LossLogEntry> log;
  double best_holdout_map = 0.0;
  int best_step = -1;  // step of the selected evaluation
  std::vector<std::pair<int, double>> evaluations;
};

// Continues training on five-frame windows with per-segment verdicts and
// restores the parameters of the best holdout evaluation. segment_fraction
// in (0,1] limits how much of the segment list is used.
FinetuneResult finetune(Model& model, const Dataset& segments_data, const Dataset& holdout_data,
                        const TrainConfig& config, double segment_fraction = 1.0);

// Scores every labeled segment location: probability is the mean over
// shifts in [tta_min, tta_max] of the model's probability on the shifted
// window. Per class the top-k locations make the table.
PredictionTable infer_segments(Model& model, const Dataset& data, int tta_min, int tta_max, int topk);

double evaluate_map(const PredictionTable& predictions, const GroundTruth& truth, int k);

}  // namespace vsc
