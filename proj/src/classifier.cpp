// SPDX-License-Identifier: Apache-2.0

#include "vsc/classifier.hpp"

#include <stdexcept>

#include "vsc/rng.hpp"

namespace vsc {

namespace {

constexpr double kProbClamp = 1e-7;
constexpr double kKlClamp = 1e-12;

// Accepts [d] or [1 x d]; returns a [1 x d] row.
Var as_row(Graph& g, Var v) {
  const Tensor& t = g.val(v);
  if (t.rank() == 1) return g.reshape(v, {1, t.dim(0)});
  if (t.rank() == 2 && t.rows() == 1) return v;
  throw std::invalid_argument("expected a vector, got shape " + shape_str(t.shape));
}

}  // namespace

void DistillConfig::validate() const {
  if (!(temperature > 0.0)) throw std::invalid_argument("distillation temperature must be positive");
  if (submodels < 1) throw std::invalid_argument("distillation needs at least one submodel");
}

MoEParams MoEParams::init(int input_dim, int num_classes, int experts, Rng& rng) {
  if (experts < 1) throw std::invalid_argument("MoE needs at least one expert");
  MoEParams p;
  p.input_dim = input_dim;
  p.num_classes = num_classes;
  p.experts = experts;
  p.expert_w = Tensor::fan_in_init({input_dim, num_classes * experts}, input_dim, rng);
  p.expert_b = Tensor::zeros({num_classes * experts});
  p.gate_w = Tensor::fan_in_init({input_dim, num_classes * experts}, input_dim, rng);
  p.gate_b = Tensor::zeros({num_classes * experts});
  return p;
}

ParamList MoEParams::params(const std::string& prefix) {
  return {{prefix + "/expert_w", &expert_w},
          {prefix + "/expert_b", &expert_b},
          {prefix + "/gate_w", &gate_w},
          {prefix + "/gate_b", &gate_b}};
}

namespace {

// gate softmax [C x E] and raw expert logits [C x E]
std::pair<Var, Var> moe_parts(Graph& g, Var v, MoEParams& p) {
  Var row = as_row(g, v);
  Var el = g.reshape(g.add_bias(g.matmul(row, g.param(p.expert_w)), g.param(p.expert_b)),
                     {p.num_classes, p.experts});
  Var gl = g.reshape(g.add_bias(g.matmul(row, g.param(p.gate_w)), g.param(p.gate_b)),
                     {p.num_classes, p.experts});
  return {g.softmax(gl, 1), el};
}

}  // namespace

Var moe_classify(Graph& g, Var v, MoEParams& p) {
  auto [gate, expert_logits] = moe_parts(g, v, p);
  Var probs = g.sum_axis(g.mul(gate, g.sigmoid(expert_logits)), 1);
  return g.reshape(probs, {1, p.num_classes});
}

Var moe_mixture_logits(Graph& g, Var v, MoEParams& p) {
  auto [gate, expert_logits] = moe_parts(g, v, p);
  return g.reshape(g.sum_axis(g.mul(gate, expert_logits), 1), {1, p.num_classes});
}

Var bce_loss(Graph& g, Var probs, const std::vector<double>& labels) {
  Var row = as_row(g, probs);
  const int c = g.val(row).cols();
  if (static_cast<int>(labels.size()) != c)
    throw std::invalid_argument("bce_loss: " + std::to_string(labels.size()) + " labels for " +
                                std::to_string(c) + " classes");
  Var p = g.clamp(row, kProbClamp, 1.0 - kProbClamp);
  std::vector<double> y = labels, ny(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) ny[i] = 1.0 - labels[i];
  Var pos = g.mul(g.constant({1, c}, std::move(y)), g.log(p));
  Var neg = g.mul(g.constant({1, c}, std::move(ny)), g.log(g.affine(p, -1.0, 1.0)));
  return g.affine(g.sum(g.add(pos, neg)), -1.0 / c, 0.0);
}

Var bce_loss_single(Graph& g, Var probs, int class_id, double label) {
  Var row = as_row(g, probs);
  const int c = g.val(row).cols();
  if (class_id < 0 || class_id >= c) throw std::invalid_argument("bce_loss_single: class out of range");
  Var p = g.clamp(g.narrow(row, 1, class_id, 1), kProbClamp, 1.0 - kProbClamp);
  Var pos = g.affine(g.log(p), -label, 0.0);
  Var neg = g.affine(g.log(g.affine(p, -1.0, 1.0)), -(1.0 - label), 0.0);
  return g.sum(g.add(pos, neg));
}

Var temp_softmax(Graph& g, Var logits, double temperature) {
  if (!(temperature > 0.0)) throw std::invalid_argument("temp_softmax: temperature must be positive");
  Var row = as_row(g, logits);
  return g.softmax(g.affine(row, 1.0 / temperature, 0.0), 1);
}

Var distill_kl(Graph& g, Var p, Var q) {
  Var pr = g.clamp(as_row(g, p), kKlClamp, 1.0);
  Var qr = g.clamp(as_row(g, q), kKlClamp, 1.0);
  return g.sum(g.mul(pr, g.sub(g.log(pr), g.log(qr))));
}

Var mixture_total_loss(Graph& g, const std::vector<Var>& submodel_logits, Var ensemble_logits,
                       const std::function<Var(Graph&, Var)>& bce_of, double temperature) {
  if (!(temperature > 0.0)) throw std::invalid_argument("mixture_total_loss: temperature must be positive");
  if (submodel_logits.empty()) throw std::invalid_argument("mixture_total_loss: no submodels");
  Var total = bce_of(g, g.sigmoid(ensemble_logits));
  Var pe = temp_softmax(g, ensemble_logits, temperature);
  for (Var zm : submodel_logits) {
    total = g.add(total, bce_of(g, g.sigmoid(zm)));
    Var pm = temp_softmax(g, zm, temperature);
    total = g.add(total, g.affine(distill_kl(g, pe, pm), temperature * temperature, 0.0));
  }
  return total;
}

Var mixture_total_loss(Graph& g, const std::vector<Var>& submodel_logits, Var ensemble_logits,
                       const std::vector<double>& labels, double temperature) {
  return mixture_total_loss(
      g, submodel_logits, ensemble_logits,
      [&labels](Graph& gg, Var probs) { return bce_loss(gg, probs, labels); }, temperature);
}

Var mixture_total_loss(Graph& g, const std::vector<Var>& submodel_logits, Var ensemble_logits,
                       const std::vector<double>& labels, const DistillConfig& config) {
  config.validate();
  if (static_cast<int>(submodel_logits.size()) != config.submodels)
    throw std::invalid_argument("mixture_total_loss: expected " + std::to_string(config.submodels) +
                                " submodels, got " + std::to_string(submodel_logits.size()));
  return mixture_total_loss(g, submodel_logits, ensemble_logits, labels, config.temperature);
}

}  // namespace vsc
