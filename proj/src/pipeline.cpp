// SPDX-License-Identifier: Apache-2.0

#include "vsc/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include "vsc/errors.hpp"
#include "vsc/rng.hpp"

namespace vsc {

void AdamOptimizer::step(const ParamList& params, double lr) {
  if (m_.empty()) {
    m_.resize(params.size());
    v_.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i].assign(params[i].tensor->data.size(), 0.0);
      v_[i].assign(params[i].tensor->data.size(), 0.0);
    }
  }
  if (m_.size() != params.size()) throw std::invalid_argument("adam: parameter list changed size");
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& t = *params[i].tensor;
    t.ensure_grad();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < t.data.size(); ++j) {
      const double gr = t.grad[j];
      m[j] = beta1_ * m[j] + (1.0 - beta1_) * gr;
      v[j] = beta2_ * v[j] + (1.0 - beta2_) * gr * gr;
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      t.data[j] -= lr * mhat / (std::sqrt(vhat) + eps_);
    }
    t.zero_grad();
  }
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw std::invalid_argument("train config: learning rate must be positive");
  if (!(decay > 0.0 && decay <= 1.0)) throw std::invalid_argument("train config: decay must be in (0, 1]");
  if (decay_interval < 1) throw std::invalid_argument("train config: decay interval must be positive");
  if (batch_size < 1 || steps < 0 || frame_samples < 1 || eval_interval < 1 || eval_topk < 1 ||
      log_interval < 1)
    throw std::invalid_argument("train config: counts must be positive");
}

double lr_at(const TrainConfig& config, long long examples_seen) {
  return config.learning_rate *
         std::pow(config.decay, static_cast<double>(examples_seen) / static_cast<double>(config.decay_interval));
}

const FrameFeatureSequence& Dataset::video(const std::string& id) const {
  auto it = by_id.find(id);
  if (it == by_id.end()) throw FormatError("unknown video id: " + id);
  return videos[it->second];
}

Dataset load_split(const DatasetManifest& manifest, const std::string& split) {
  Dataset data;
  data.videos = read_features(manifest.resolve(split + "_features"));
  for (std::size_t i = 0; i < data.videos.size(); ++i) {
    const auto& v = data.videos[i];
    if (v.dim_visual != manifest.dim_visual || v.dim_audio != manifest.dim_audio)
      throw FormatError("video " + v.video_id + " has dims " + std::to_string(v.dim_visual) + "+" +
                        std::to_string(v.dim_audio) + ", manifest says " +
                        std::to_string(manifest.dim_visual) + "+" + std::to_string(manifest.dim_audio));
    data.by_id[v.video_id] = i;
  }
  if (manifest.has(split + "_segments")) {
    data.segments = read_segments(manifest.resolve(split + "_segments"));
    for (const auto& s : data.segments) {
      const auto& v = data.video(s.video_id);
      if (s.start < 0 || s.start + kSegmentFrames > v.frames)
        throw FormatError("segment " + segment_id(s.video_id, s.start) + " exceeds video length " +
                          std::to_string(v.frames));
      if (s.class_id < 0 || s.class_id >= manifest.classes)
        throw FormatError("segment class " + std::to_string(s.class_id) + " out of range");
    }
  }
  return data;
}

GroundTruth truth_from_segments(const std::vector<SegmentLabel>& segments) {
  GroundTruth truth;
  for (const auto& s : segments)
    if (s.positive) truth.positives[s.class_id].insert(segment_id(s.video_id, s.start));
  return truth;
}

namespace {

std::vector<double> label_vector(const std::vector<int>& labels, int classes) {
  std::vector<double> y(static_cast<std::size_t>(classes), 0.0);
  for (int c : labels) y[static_cast<std::size_t>(c)] = 1.0;
  return y;
}

void check_dims(const Model& model, const Dataset& data, const char* what) {
  if (data.videos.empty()) return;
  const auto& v = data.videos.front();
  const auto& c = model.config();
  if (v.dim_visual != c.dim_visual || v.dim_audio != c.dim_audio)
    throw FormatError(std::string(what) + ": model expects feature dims " +
                      std::to_string(c.dim_visual) + "+" + std::to_string(c.dim_audio) +
                      ", dataset has " + std::to_string(v.dim_visual) + "+" +
                      std::to_string(v.dim_audio));
}

void append_log(const std::string& path, const std::vector<LossLogEntry>& entries) {
  if (path.empty()) return;
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path);
  out << "step\texamples\tlr\tloss\n";
  char buf[64];
  for (const auto& e : entries) {
    std::snprintf(buf, sizeof(buf), "%.17g", e.lr);
    out << e.step << '\t' << e.examples_seen << '\t' << buf << '\t';
    std::snprintf(buf, sizeof(buf), "%.17g", e.loss);
    out << buf << '\n';
  }
}

}  // namespace

TrainResult pretrain(Model& model, const Dataset& data, const TrainConfig& config,
                     const std::string& log_path) {
  if (data.videos.empty()) throw std::invalid_argument("pretrain: empty dataset");
  config.validate();
  check_dims(model, data, "pretrain");
  const int classes = model.config().num_classes;
  Rng rng(derive_seed(config.seed, 11));
  AdamOptimizer adam;
  ParamList params = model.params();
  for (auto& p : params) p.tensor->zero_grad();

  TrainResult result;
  long long examples_seen = 0;
  for (int step = 0; step < config.steps; ++step) {
    const double lr = lr_at(config, examples_seen);
    Graph g;
    Var total;
    for (int b = 0; b < config.batch_size; ++b) {
      const auto& video = data.videos[static_cast<std::size_t>(rng.uniform_int(static_cast<int>(data.videos.size())))];
      const Tensor frames = sample_frames(video, config.frame_samples, config.sample_mode, rng);
      Var l = model.loss(g, frames, label_vector(video.labels, classes));
      total = (b == 0) ? l : g.add(total, l);
    }
    Var loss = g.affine(total, 1.0 / config.batch_size, 0.0);
    g.backward(loss);
    adam.step(params, lr);
    if (step % config.log_interval == 0 || step == config.steps - 1)
      result.log.push_back({step, examples_seen, lr, g.val(loss).at(0)});
    examples_seen += config.batch_size;
  }
  append_log(log_path, result.log);
  return result;
}

namespace {

double holdout_map(Model& model, const Dataset& holdout, int topk) {
  const PredictionTable preds = infer_segments(model, holdout, 0, 0, topk);
  return map_at_k(preds, truth_from_segments(holdout.segments), topk);
}

std::vector<std::vector<double>> snapshot(const ParamList& params) {
  std::vector<std::vector<double>> s;
  s.reserve(params.size());
  for (const auto& p : params) s.push_back(p.tensor->data);
  return s;
}

void restore(const ParamList& params, const std::vector<std::vector<double>>& s) {
  for (std::size_t i = 0; i < params.size(); ++i) params[i].tensor->data = s[i];
}

}  // namespace

FinetuneResult finetune(Model& model, const Dataset& segments_data, const Dataset& holdout_data,
                        const TrainConfig& config, double segment_fraction) {
  if (segments_data.segments.empty()) throw std::invalid_argument("finetune: no segment labels");
  if (!(segment_fraction > 0.0 && segment_fraction <= 1.0))
    throw std::invalid_argument("finetune: segment fraction must be in (0, 1]");
  config.validate();
  check_dims(model, segments_data, "finetune");
  check_dims(model, holdout_data, "finetune holdout");
  const std::size_t usable = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::llround(segment_fraction * static_cast<double>(segments_data.segments.size()))));
  Rng rng(derive_seed(config.seed, 13));
  AdamOptimizer adam;
  ParamList params = model.params();
  for (auto& p : params) p.tensor->zero_grad();

  FinetuneResult result;
  auto best_params = snapshot(params);
  result.best_holdout_map = holdout_map(model, holdout_data, config.eval_topk);
  result.best_step = -1;  // pre-finetuning state counts as a candidate
  result.evaluations.emplace_back(-1, result.best_holdout_map);

  long long examples_seen = 0;
  for (int step = 0; step < config.steps; ++step) {
    const double lr = lr_at(config, examples_seen);
    Graph g;
    Var total;
    for (int b = 0; b < config.batch_size; ++b) {
      const auto& seg = segments_data.segments[static_cast<std::size_t>(rng.uniform_int(static_cast<int>(usable)))];
      const Tensor window = extract_segment(segments_data.video(seg.video_id), seg.start, 0);
      Var l = model.loss_single(g, window, seg.class_id, seg.positive ? 1.0 : 0.0);
      total = (b == 0) ? l : g.add(total, l);
    }
    Var loss = g.affine(total, 1.0 / config.batch_size, 0.0);
    g.backward(loss);
    adam.step(params, lr);
    if (step % config.log_interval == 0 || step == config.steps - 1)
      result.log.push_back({step, examples_seen, lr, g.val(loss).at(0)});
    examples_seen += config.batch_size;

    if ((step + 1) % config.eval_interval == 0 || step == config.steps - 1) {
      const double map = holdout_map(model, holdout_data, config.eval_topk);
      result.evaluations.emplace_back(step, map);
      if (map > result.best_holdout_map) {
        result.best_holdout_map = map;
        result.best_step = step;
        best_params = snapshot(params);
      }
    }
  }
  restore(params, best_params);
  return result;
}

PredictionTable infer_segments(Model& model, const Dataset& data, int tta_min, int tta_max, int topk) {
  if (tta_min > tta_max) throw std::invalid_argument("infer: tta range is empty");
  if (topk < 1) throw std::invalid_argument("infer: topk must be >= 1");
  check_dims(model, data, "infer");
  // unique candidate locations in deterministic order
  std::vector<std::pair<std::string, int>> locations;
  for (const auto& s : data.segments) locations.emplace_back(s.video_id, s.start);
  std::sort(locations.begin(), locations.end());
  locations.erase(std::unique(locations.begin(), locations.end()), locations.end());

  const int classes = model.config().num_classes;
  const int shifts = tta_max - tta_min + 1;
  std::vector<std::vector<RankedItem>> per_class(static_cast<std::size_t>(classes));
  for (const auto& [video_id, start] : locations) {
    const auto& video = data.video(video_id);
    std::vector<double> mean_probs(static_cast<std::size_t>(classes), 0.0);
    for (int shift = tta_min; shift <= tta_max; ++shift) {
      const Tensor window = extract_segment(video, start, shift);
      Graph g;
      Var probs = model.forward_probs(g, window);
      const Tensor& p = g.val(probs);
      for (int c = 0; c < classes; ++c) mean_probs[static_cast<std::size_t>(c)] += p.at(c);
    }
    const std::string seg = segment_id(video_id, start);
    for (int c = 0; c < classes; ++c)
      per_class[static_cast<std::size_t>(c)].push_back({seg, mean_probs[static_cast<std::size_t>(c)] / shifts});
  }

  PredictionTable table;
  for (int c = 0; c < classes; ++c) {
    auto ranked = rank_items_streaming(per_class[static_cast<std::size_t>(c)], topk);
    if (!ranked.empty()) table[c] = std::move(ranked);
  }
  return table;
}

double evaluate_map(const PredictionTable& predictions, const GroundTruth& truth, int k) {
  return map_at_k(predictions, truth, k);
}

}  // namespace vsc
