// SPDX-License-Identifier: Apache-2.0

#include "vsc/nextvlad.hpp"

#include <stdexcept>

#include "vsc/rng.hpp"

namespace vsc {

NeXtVladParams NeXtVladParams::init(int feature_dim, int expansion, int groups, int clusters,
                                    int hidden, int reduction, Rng& rng) {
  if ((expansion * feature_dim) % groups != 0)
    throw std::invalid_argument("NeXtVLAD: expanded dimension " + std::to_string(expansion * feature_dim) +
                                " is not divisible by " + std::to_string(groups) + " groups");
  if (hidden % reduction != 0)
    throw std::invalid_argument("NeXtVLAD: hidden size " + std::to_string(hidden) +
                                " is not divisible by reduction " + std::to_string(reduction));
  NeXtVladParams p;
  p.feature_dim = feature_dim;
  p.expansion = expansion;
  p.groups = groups;
  p.clusters = clusters;
  p.hidden = hidden;
  p.reduction = reduction;
  const int ed = expansion * feature_dim;
  const int gd = p.group_dim();
  p.expand_w = Tensor::fan_in_init({feature_dim, ed}, feature_dim, rng);
  p.expand_b = Tensor::zeros({ed});
  p.attn_w = Tensor::fan_in_init({ed, groups}, ed, rng);
  p.attn_b = Tensor::zeros({groups});
  p.assign_w = Tensor::fan_in_init({ed, groups * clusters}, ed, rng);
  p.assign_b = Tensor::zeros({groups * clusters});
  p.centers = Tensor::fan_in_init({clusters, gd}, gd, rng);
  p.hidden_w = Tensor::fan_in_init({clusters * gd, hidden}, clusters * gd, rng);
  p.hidden_b = Tensor::zeros({hidden});
  p.se_w1 = Tensor::fan_in_init({hidden, hidden / reduction}, hidden, rng);
  p.se_b1 = Tensor::zeros({hidden / reduction});
  p.se_w2 = Tensor::fan_in_init({hidden / reduction, hidden}, hidden / reduction, rng);
  p.se_b2 = Tensor::zeros({hidden});
  return p;
}

ParamList NeXtVladParams::params(const std::string& prefix) {
  return {{prefix + "/expand_w", &expand_w}, {prefix + "/expand_b", &expand_b},
          {prefix + "/attn_w", &attn_w},     {prefix + "/attn_b", &attn_b},
          {prefix + "/assign_w", &assign_w}, {prefix + "/assign_b", &assign_b},
          {prefix + "/centers", &centers},   {prefix + "/hidden_w", &hidden_w},
          {prefix + "/hidden_b", &hidden_b}, {prefix + "/se_w1", &se_w1},
          {prefix + "/se_b1", &se_b1},       {prefix + "/se_w2", &se_w2},
          {prefix + "/se_b2", &se_b2}};
}

namespace {

Var expand_linear(Graph& g, Var frames, NeXtVladParams& p) {
  const Tensor& f = g.val(frames);
  if (f.rank() != 2 || f.cols() != p.feature_dim)
    throw std::invalid_argument("nextvlad: frames must be [I x " + std::to_string(p.feature_dim) +
                                "], got " + shape_str(f.shape));
  return g.add_bias(g.matmul(frames, g.param(p.expand_w)), g.param(p.expand_b));
}

}  // namespace

Var nextvlad_expand_reshape(Graph& g, Var frames, NeXtVladParams& p) {
  Var expanded = expand_linear(g, frames, p);
  const int frames_n = g.val(frames).rows();
  return g.reshape(expanded, {frames_n, p.groups, p.group_dim()});
}

Var nextvlad_group_attention(Graph& g, Var expanded, NeXtVladParams& p) {
  return g.sigmoid(g.add_bias(g.matmul(expanded, g.param(p.attn_w)), g.param(p.attn_b)));
}

Var nextvlad_encode(Graph& g, Var frames, NeXtVladParams& p, double eps) {
  const Tensor& f = g.val(frames);
  if (f.rank() != 2 || f.rows() < 1) throw std::invalid_argument("nextvlad_encode: empty frame sequence");
  const int frames_n = f.rows();
  const int gd = p.group_dim();

  Var expanded = expand_linear(g, frames, p);  // [I x lambda*J]
  Var attn = nextvlad_group_attention(g, expanded, p);  // [I x G]
  Var assign_logits = g.add_bias(g.matmul(expanded, g.param(p.assign_w)), g.param(p.assign_b));
  // row-major [I x G*K] reinterprets as [(I*G) x K]: rows enumerate (frame, group)
  Var assign = g.softmax(g.reshape(assign_logits, {frames_n * p.groups, p.clusters}), 1);
  Var weighted = g.scale_rows(assign, g.reshape(attn, {frames_n * p.groups}));
  Var grouped = g.reshape(expanded, {frames_n * p.groups, gd});
  Var residuals = g.aggregate_residuals(weighted, grouped, g.param(p.centers));  // [K x gd]
  Var normalized = g.l2_normalize(residuals, 1, eps);
  return g.reshape(normalized, {1, p.clusters * gd});
}

Var secg(Graph& g, Var h, Var w1, Var b1, Var w2, Var b2) {
  const Tensor& th = g.val(h);
  if (th.rank() != 2 || th.rows() != 1)
    throw std::invalid_argument("secg: expected a [1 x H] row, got " + shape_str(th.shape));
  Var bottleneck = g.relu(g.add_bias(g.matmul(h, w1), b1));
  Var gate = g.sigmoid(g.add_bias(g.matmul(bottleneck, w2), b2));
  return g.mul(gate, h);
}

std::int64_t secg_param_count(int hidden, int reduction) {
  const std::int64_t h = hidden, b = hidden / reduction;
  return h * b + b + b * h + h;
}

std::int64_t context_gate_param_count(int hidden) {
  const std::int64_t h = hidden;
  return h * h + h;
}

MixtureParams MixtureParams::init(int feature_dim, int submodels, Rng& rng) {
  if (submodels < 1) throw std::invalid_argument("mixture needs at least one submodel");
  MixtureParams p;
  p.feature_dim = feature_dim;
  p.submodels = submodels;
  p.gate_w = Tensor::fan_in_init({feature_dim, submodels}, feature_dim, rng);
  p.gate_b = Tensor::zeros({submodels});
  return p;
}

ParamList MixtureParams::params(const std::string& prefix) {
  return {{prefix + "/gate_w", &gate_w}, {prefix + "/gate_b", &gate_b}};
}

Var mixture_weights(Graph& g, Var frame_mean, MixtureParams& p) {
  return g.softmax(g.add_bias(g.matmul(frame_mean, g.param(p.gate_w)), g.param(p.gate_b)), 1);
}

Var mix_logits(Graph& g, const std::vector<Var>& submodel_logits, Var weights) {
  if (submodel_logits.empty()) throw std::invalid_argument("mix_logits: no submodels");
  const Tensor& tw = g.val(weights);
  if (tw.rank() != 2 || tw.rows() != 1 || tw.cols() != static_cast<int>(submodel_logits.size()))
    throw std::invalid_argument("mix_logits: weights shape " + shape_str(tw.shape) + " does not cover " +
                                std::to_string(submodel_logits.size()) + " submodels");
  Var stacked = g.concat(submodel_logits, 0);  // [M x C]
  return g.matmul(weights, stacked);           // [1 x C]
}

NeXtVladSubmodel NeXtVladSubmodel::init(int feature_dim, int expansion, int groups, int clusters,
                                        int hidden, int reduction, int num_classes, Rng& rng) {
  NeXtVladSubmodel m;
  m.enc = NeXtVladParams::init(feature_dim, expansion, groups, clusters, hidden, reduction, rng);
  m.logreg_w = Tensor::fan_in_init({hidden, num_classes}, hidden, rng);
  m.logreg_b = Tensor::zeros({num_classes});
  return m;
}

ParamList NeXtVladSubmodel::params(const std::string& prefix) {
  ParamList list = enc.params(prefix);
  list.push_back({prefix + "/logreg_w", &logreg_w});
  list.push_back({prefix + "/logreg_b", &logreg_b});
  return list;
}

Var NeXtVladSubmodel::forward_logits(Graph& g, Var frames) {
  Var code = nextvlad_encode(g, frames, enc);
  Var hidden = g.add_bias(g.matmul(code, g.param(enc.hidden_w)), g.param(enc.hidden_b));
  Var gated = secg(g, hidden, g.param(enc.se_w1), g.param(enc.se_b1), g.param(enc.se_w2),
                   g.param(enc.se_b2));
  return g.add_bias(g.matmul(gated, g.param(logreg_w)), g.param(logreg_b));
}

MixNeXtVladModel MixNeXtVladModel::init(int feature_dim, int expansion, int groups, int clusters,
                                        int hidden, int reduction, int num_classes, int submodels,
                                        Rng& rng) {
  MixNeXtVladModel m;
  for (int i = 0; i < submodels; ++i)
    m.submodels.push_back(NeXtVladSubmodel::init(feature_dim, expansion, groups, clusters, hidden,
                                                 reduction, num_classes, rng));
  m.mixture = MixtureParams::init(feature_dim, submodels, rng);
  return m;
}

ParamList MixNeXtVladModel::params() {
  ParamList list;
  for (std::size_t i = 0; i < submodels.size(); ++i)
    for (auto& e : submodels[i].params("nextvlad/" + std::to_string(i))) list.push_back(e);
  for (auto& e : mixture.params("mixture")) list.push_back(e);
  return list;
}

std::pair<std::vector<Var>, Var> MixNeXtVladModel::forward_all_logits(Graph& g, const Tensor& frames) {
  Var f = g.constant(frames);
  const int n = frames.rows();
  std::vector<Var> logits;
  logits.reserve(submodels.size());
  for (auto& sub : submodels) logits.push_back(sub.forward_logits(g, f));
  Var mean_row = g.constant({1, n}, std::vector<double>(static_cast<std::size_t>(n), 1.0 / n));
  Var frame_mean = g.matmul(mean_row, f);  // [1 x J]
  Var weights = mixture_weights(g, frame_mean, mixture);
  return {logits, mix_logits(g, logits, weights)};
}

Var MixNeXtVladModel::forward_probs(Graph& g, const Tensor& frames) {
  auto [subs, mixed] = forward_all_logits(g, frames);
  (void)subs;
  return g.sigmoid(mixed);
}

}  // namespace vsc
