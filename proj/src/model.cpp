// SPDX-License-Identifier: Apache-2.0

#include "vsc/model.hpp"

#include <stdexcept>

#include "vsc/checkpoint.hpp"
#include "vsc/classifier.hpp"
#include "vsc/errors.hpp"
#include "vsc/netvlad.hpp"
#include "vsc/nextvlad.hpp"
#include "vsc/rng.hpp"

namespace vsc {

ModelFamily family_from_string(const std::string& s) {
  if (s == "netvlad") return ModelFamily::kNetVlad;
  if (s == "nextvlad_mix") return ModelFamily::kMixNeXtVlad;
  if (s == "bert") return ModelFamily::kBert;
  if (s == "bert_cross") return ModelFamily::kBertCross;
  throw std::invalid_argument("unknown model family: " + s);
}

std::string to_string(ModelFamily f) {
  switch (f) {
    case ModelFamily::kNetVlad: return "netvlad";
    case ModelFamily::kMixNeXtVlad: return "nextvlad_mix";
    case ModelFamily::kBert: return "bert";
    case ModelFamily::kBertCross: return "bert_cross";
  }
  return "?";
}

namespace {

class NetVladFamily final : public Model {
 public:
  NetVladFamily(const ModelConfig& config, Rng& rng)
      : config_(config),
        model_(GatedNetVladModel::init(config.input_dim(), config.nv_clusters, config.nv_hidden,
                                       config.num_classes, config.moe_experts, rng)) {}

  const ModelConfig& config() const override { return config_; }
  ParamList params() override { return model_.params(); }

  Var forward_probs(Graph& g, const Tensor& frames) override { return model_.forward_probs(g, frames); }

  Var loss(Graph& g, const Tensor& frames, const std::vector<double>& labels) override {
    return bce_loss(g, forward_probs(g, frames), labels);
  }

  Var loss_single(Graph& g, const Tensor& frames, int class_id, double label) override {
    return bce_loss_single(g, forward_probs(g, frames), class_id, label);
  }

 private:
  ModelConfig config_;
  GatedNetVladModel model_;
};

class MixNeXtVladFamily final : public Model {
 public:
  MixNeXtVladFamily(const ModelConfig& config, Rng& rng)
      : config_(config),
        model_(MixNeXtVladModel::init(config.input_dim(), config.nx_expansion, config.nx_groups,
                                      config.nx_clusters, config.nx_hidden, config.nx_reduction,
                                      config.num_classes, config.nx_submodels, rng)) {}

  const ModelConfig& config() const override { return config_; }
  ParamList params() override { return model_.params(); }

  Var forward_probs(Graph& g, const Tensor& frames) override { return model_.forward_probs(g, frames); }

  Var loss(Graph& g, const Tensor& frames, const std::vector<double>& labels) override {
    auto [subs, mixed] = model_.forward_all_logits(g, frames);
    return mixture_total_loss(g, subs, mixed, labels, config_.temperature);
  }

  Var loss_single(Graph& g, const Tensor& frames, int class_id, double label) override {
    auto [subs, mixed] = model_.forward_all_logits(g, frames);
    return mixture_total_loss(
        g, subs, mixed,
        [class_id, label](Graph& gg, Var probs) { return bce_loss_single(gg, probs, class_id, label); },
        config_.temperature);
  }

 private:
  ModelConfig config_;
  MixNeXtVladModel model_;
};

class BertFamily final : public Model {
 public:
  BertFamily(const ModelConfig& config, Rng& rng)
      : config_(config),
        model_(BertModel::init(config.input_dim(), config.tf_d_model, config.tf_heads,
                               config.tf_layers, config.tf_max_len, config.num_classes,
                               config.moe_experts, config.agg, rng)) {}

  const ModelConfig& config() const override { return config_; }
  ParamList params() override { return model_.params(); }

  Var forward_probs(Graph& g, const Tensor& frames) override { return model_.forward_probs(g, frames); }

  Var loss(Graph& g, const Tensor& frames, const std::vector<double>& labels) override {
    return bce_loss(g, forward_probs(g, frames), labels);
  }

  Var loss_single(Graph& g, const Tensor& frames, int class_id, double label) override {
    return bce_loss_single(g, forward_probs(g, frames), class_id, label);
  }

 private:
  ModelConfig config_;
  BertModel model_;
};

class BertCrossFamily final : public Model {
 public:
  BertCrossFamily(const ModelConfig& config, Rng& rng)
      : config_(config),
        model_(BertCrossModel::init(config.dim_visual, config.dim_audio, config.tf_d_model,
                                    config.tf_audio_d_model, config.tf_heads, config.tf_layers,
                                    config.tf_max_len, config.num_classes, config.moe_experts,
                                    config.agg, rng)) {}

  const ModelConfig& config() const override { return config_; }
  ParamList params() override { return model_.params(); }

  Var forward_probs(Graph& g, const Tensor& frames) override { return model_.forward_probs(g, frames); }

  Var loss(Graph& g, const Tensor& frames, const std::vector<double>& labels) override {
    return bce_loss(g, forward_probs(g, frames), labels);
  }

  Var loss_single(Graph& g, const Tensor& frames, int class_id, double label) override {
    return bce_loss_single(g, forward_probs(g, frames), class_id, label);
  }

 private:
  ModelConfig config_;
  BertCrossModel model_;
};

constexpr int kMetaFields = 20;

Tensor encode_meta(const ModelConfig& c) {
  std::vector<double> v = {static_cast<double>(static_cast<int>(c.family)),
                           static_cast<double>(c.num_classes),
                           static_cast<double>(c.dim_visual),
                           static_cast<double>(c.dim_audio),
                           static_cast<double>(c.nv_clusters),
                           static_cast<double>(c.nv_hidden),
                           static_cast<double>(c.nx_groups),
                           static_cast<double>(c.nx_clusters),
                           static_cast<double>(c.nx_expansion),
                           static_cast<double>(c.nx_hidden),
                           static_cast<double>(c.nx_reduction),
                           static_cast<double>(c.nx_submodels),
                           c.temperature,
                           static_cast<double>(c.tf_layers),
                           static_cast<double>(c.tf_heads),
                           static_cast<double>(c.tf_d_model),
                           static_cast<double>(c.tf_audio_d_model),
                           static_cast<double>(c.tf_max_len),
                           static_cast<double>(static_cast<int>(c.agg)),
                           static_cast<double>(c.moe_experts)};
  return Tensor({kMetaFields}, std::move(v));
}

ModelConfig decode_meta(const Tensor& t) {
  if (t.size() != kMetaFields) throw FormatError("checkpoint meta/config has unexpected layout");
  ModelConfig c;
  int i = 0;
  c.family = static_cast<ModelFamily>(static_cast<int>(t.at(i++)));
  c.num_classes = static_cast<int>(t.at(i++));
  c.dim_visual = static_cast<int>(t.at(i++));
  c.dim_audio = static_cast<int>(t.at(i++));
  c.nv_clusters = static_cast<int>(t.at(i++));
  c.nv_hidden = static_cast<int>(t.at(i++));
  c.nx_groups = static_cast<int>(t.at(i++));
  c.nx_clusters = static_cast<int>(t.at(i++));
  c.nx_expansion = static_cast<int>(t.at(i++));
  c.nx_hidden = static_cast<int>(t.at(i++));
  c.nx_reduction = static_cast<int>(t.at(i++));
  c.nx_submodels = static_cast<int>(t.at(i++));
  c.temperature = t.at(i++);
  c.tf_layers = static_cast<int>(t.at(i++));
  c.tf_heads = static_cast<int>(t.at(i++));
  c.tf_d_model = static_cast<int>(t.at(i++));
  c.tf_audio_d_model = static_cast<int>(t.at(i++));
  c.tf_max_len = static_cast<int>(t.at(i++));
  c.agg = static_cast<AggMode>(static_cast<int>(t.at(i++)));
  c.moe_experts = static_cast<int>(t.at(i++));
  return c;
}

}  // namespace

std::unique_ptr<Model> make_model(const ModelConfig& config, std::uint64_t seed) {
  if (config.num_classes < 1 || config.dim_visual < 1 || config.dim_audio < 0)
    throw std::invalid_argument("model config: classes and feature dimensions must be set");
  Rng rng(derive_seed(seed, 7));
  switch (config.family) {
    case ModelFamily::kNetVlad: return std::make_unique<NetVladFamily>(config, rng);
    case ModelFamily::kMixNeXtVlad: return std::make_unique<MixNeXtVladFamily>(config, rng);
    case ModelFamily::kBert: return std::make_unique<BertFamily>(config, rng);
    case ModelFamily::kBertCross: return std::make_unique<BertCrossFamily>(config, rng);
  }
  throw std::invalid_argument("model config: bad family");
}

void save_model(Model& model, const std::filesystem::path& path) {
  Checkpoint ck;
  ck.put("meta/config", encode_meta(model.config()));
  store_params(ck, model.params());
  ck.save(path);
}

std::unique_ptr<Model> load_model(const std::filesystem::path& path) {
  const Checkpoint ck = Checkpoint::load(path);
  const ModelConfig config = decode_meta(ck.at("meta/config"));
  auto model = make_model(config, 0);
  ParamList params = model->params();
  restore_params(ck, params);
  return model;
}

}  // namespace vsc
