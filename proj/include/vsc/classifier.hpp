// SPDX-License-Identifier: Apache-2.0
//
// Mixture-of-experts multi-label head and the training losses: binary cross
// entropy, temperature softmax, KL distillation, and the combined mixture
// loss used by the three-way NeXtVLAD ensemble.

#pragma once

#include <string>
#include <vector>

#include "vsc/tensor.hpp"

namespace vsc {

class Rng;

struct DistillConfig {
  double temperature = 3.0;
  int submodels = 3;

  void validate() const;
};

struct MoEParams {
  int input_dim = 0;
  int num_classes = 0;
  int experts = 2;
  Tensor expert_w;  // d x (C*E)
  Tensor expert_b;  // C*E
  Tensor gate_w;    // d x (C*E)
  Tensor gate_b;    // C*E

  static MoEParams init(int input_dim, int num_classes, int experts, Rng& rng);
  ParamList params(const std::string& prefix);
};

// Per-class probability: sum_e gate_e(v) * sigmoid(expert_e(v)), with a
// softmax gate over the experts of each class. Returns a [1 x C] row.
Var moe_classify(Graph& g, Var v, MoEParams& p);

// Per-class pre-sigmoid logit: sum_e gate_e(v) * expert_e(v). This is the
// form that gets context-gated before the final sigmoid in the gated
// NetVLAD head.
Var moe_mixture_logits(Graph& g, Var v, MoEParams& p);

// Mean over classes of -[y log p + (1-y) log(1-p)], with p clamped to
// [1e-7, 1-1e-7] before the logs.
Var bce_loss(Graph& g, Var probs, const std::vector<double>& labels);
// Same loss restricted to a single class (verified segment labels carry a
// verdict for one class only).
Var bce_loss_single(Graph& g, Var probs, int class_id, double label);

// softmax(z / T); T must be positive.
Var temp_softmax(Graph& g, Var logits, double temperature);

// KL(p || q) = sum p log(p/q) with both distributions clamped at 1e-12.
Var distill_kl(Graph& g, Var p, Var q);

// Eq-style combined objective: sum_m bce(m) + bce(ensemble)
// + T^2 * sum_m KL(p_ensemble || p_m), where p are temperature softmaxes of
// the logits. The bce term is supplied per prediction through `bce_of` so
// video-level (full label vector) and segment-level (single class) training
// share this path.
Var mixture_total_loss(Graph& g, const std::vector<Var>& submodel_logits, Var ensemble_logits,
                       const std::function<Var(Graph&, Var)>& bce_of, double temperature);

Var mixture_total_loss(Graph& g, const std::vector<Var>& submodel_logits, Var ensemble_logits,
                       const std::vector<double>& labels, double temperature);

Var mixture_total_loss(Graph& g, const std::vector<Var>& submodel_logits, Var ensemble_logits,
                       const std::vector<double>& labels, const DistillConfig& config);

}  // namespace vsc
