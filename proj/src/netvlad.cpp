// SPDX-License-Identifier: Apache-2.0

#include "vsc/netvlad.hpp"

#include <stdexcept>

#include "vsc/rng.hpp"

namespace vsc {

NetVladParams NetVladParams::init(int feature_dim, int clusters, int hidden, Rng& rng) {
  if (clusters < 1 || hidden < 1) throw std::invalid_argument("NetVLAD needs clusters >= 1, hidden >= 1");
  NetVladParams p;
  p.feature_dim = feature_dim;
  p.clusters = clusters;
  p.hidden = hidden;
  p.centers = Tensor::fan_in_init({clusters, feature_dim}, feature_dim, rng);
  p.assign_w = Tensor::fan_in_init({clusters, feature_dim}, feature_dim, rng);
  p.assign_b = Tensor::zeros({clusters});
  p.hidden_w = Tensor::fan_in_init({clusters * feature_dim, hidden}, clusters * feature_dim, rng);
  p.hidden_b = Tensor::zeros({hidden});
  p.cg_w = Tensor::fan_in_init({hidden, hidden}, hidden, rng);
  p.cg_b = Tensor::zeros({hidden});
  return p;
}

ParamList NetVladParams::params(const std::string& prefix) {
  return {{prefix + "/centers", &centers},   {prefix + "/assign_w", &assign_w},
          {prefix + "/assign_b", &assign_b}, {prefix + "/hidden_w", &hidden_w},
          {prefix + "/hidden_b", &hidden_b}, {prefix + "/cg_w", &cg_w},
          {prefix + "/cg_b", &cg_b}};
}

Var netvlad_soft_assign(Graph& g, Var frames, NetVladParams& p) {
  const Tensor& f = g.val(frames);
  if (f.rank() != 2 || f.cols() != p.feature_dim)
    throw std::invalid_argument("soft_assign: frames must be [I x " + std::to_string(p.feature_dim) +
                                "], got " + shape_str(f.shape));
  Var logits = g.add_bias(g.matmul(frames, g.transpose(g.param(p.assign_w))), g.param(p.assign_b));
  return g.softmax(logits, 1);
}

Var netvlad_encode(Graph& g, Var frames, NetVladParams& p, double eps) {
  const Tensor& f = g.val(frames);
  if (f.rank() != 2 || f.rows() < 1) throw std::invalid_argument("netvlad_encode: empty frame sequence");
  Var assign = netvlad_soft_assign(g, frames, p);
  Var residuals = g.aggregate_residuals(assign, frames, g.param(p.centers));  // [K x J]
  Var normalized = g.l2_normalize(residuals, 1, eps);
  return g.reshape(normalized, {1, p.clusters * p.feature_dim});
}

Var context_gate(Graph& g, Var y, Var w, Var b) {
  const Tensor& ty = g.val(y);
  if (ty.rank() != 2 || ty.rows() != 1)
    throw std::invalid_argument("context_gate: expected a [1 x H] row, got " + shape_str(ty.shape));
  Var gate = g.sigmoid(g.add_bias(g.matmul(y, w), b));
  return g.mul(gate, y);
}

GatedNetVladModel GatedNetVladModel::init(int feature_dim, int clusters, int hidden, int num_classes,
                                          int experts, Rng& rng) {
  GatedNetVladModel m;
  m.vlad = NetVladParams::init(feature_dim, clusters, hidden, rng);
  m.moe = MoEParams::init(hidden, num_classes, experts, rng);
  m.out_cg_w = Tensor::fan_in_init({num_classes, num_classes}, num_classes, rng);
  m.out_cg_b = Tensor::zeros({num_classes});
  return m;
}

ParamList GatedNetVladModel::params() {
  ParamList list = vlad.params("netvlad");
  for (auto& e : moe.params("moe")) list.push_back(e);
  list.push_back({"netvlad/out_cg_w", &out_cg_w});
  list.push_back({"netvlad/out_cg_b", &out_cg_b});
  return list;
}

Var GatedNetVladModel::forward_logits(Graph& g, const Tensor& frames) {
  Var f = g.constant(frames);
  Var code = netvlad_encode(g, f, vlad);
  Var hidden = g.add_bias(g.matmul(code, g.param(vlad.hidden_w)), g.param(vlad.hidden_b));
  Var gated = context_gate(g, hidden, g.param(vlad.cg_w), g.param(vlad.cg_b));
  Var logits = moe_mixture_logits(g, gated, moe);
  return context_gate(g, logits, g.param(out_cg_w), g.param(out_cg_b));
}

Var GatedNetVladModel::forward_probs(Graph& g, const Tensor& frames) {
  return g.sigmoid(forward_logits(g, frames));
}

}  // namespace vsc
