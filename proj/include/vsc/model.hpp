// SPDX-License-Identifier: Apache-2.0
//
// Uniform interface over the four model families so training, inference,
// and checkpointing share one code path. Checkpoints carry the model
// configuration in a "meta/config" entry and can be reopened without
// external context.

#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "vsc/tensor.hpp"
#include "vsc/transformer.hpp"

namespace vsc {

enum class ModelFamily { kNetVlad, kMixNeXtVlad, kBert, kBertCross };

ModelFamily family_from_string(const std::string& s);
std::string to_string(ModelFamily f);

struct ModelConfig {
  ModelFamily family = ModelFamily::kNetVlad;
  int num_classes = 0;
  int dim_visual = 0;
  int dim_audio = 0;

  // gated NetVLAD
  int nv_clusters = 16;
  int nv_hidden = 128;

  // NeXtVLAD mixture
  int nx_groups = 4;
  int nx_clusters = 8;
  int nx_expansion = 2;
  int nx_hidden = 64;
  int nx_reduction = 16;
  int nx_submodels = 3;
  double temperature = 3.0;

  // transformer
  int tf_layers = 2;
  int tf_heads = 4;
  int tf_d_model = 32;
  int tf_audio_d_model = 8;  // audio tower width for the cross-modal variant
  int tf_max_len = 512;
  AggMode agg = AggMode::kMean;

  int moe_experts = 2;

  int input_dim() const { return dim_visual + dim_audio; }
};

class Model {
 public:
  virtual ~Model() = default;
  virtual const ModelConfig& config() const = 0;
  virtual ParamList params() = 0;
  // Class probabilities for one frame window, a [1 x C] row in (0,1).
  virtual Var forward_probs(Graph& g, const Tensor& frames) = 0;
  // Training loss against a full per-class label vector.
  virtual Var loss(Graph& g, const Tensor& frames, const std::vector<double>& labels) = 0;
  // Training loss against a single verified (class, verdict) label.
  virtual Var loss_single(Graph& g, const Tensor& frames, int class_id, double label) = 0;
};

// Builds a freshly initialized model; parameter draws come from `seed` in a
// fixed order.
std::unique_ptr<Model> make_model(const ModelConfig& config, std::uint64_t seed);

void save_model(Model& model, const std::filesystem::path& path);
std::unique_ptr<Model> load_model(const std::filesystem::path& path);

}  // namespace vsc
