// SPDX-License-Identifier: Apache-2.0
//
// NeXtVLAD encoder: linear expansion, group reshape, per-group attention,
// grouped soft-assignment VLAD aggregation, squeeze-excitation context
// gating, and the three-way mixture with distillation-ready logits.

#pragma once

#include <string>
#include <vector>

#include "vsc/netvlad.hpp"
#include "vsc/tensor.hpp"

namespace vsc {

class Rng;

struct NeXtVladParams {
  int feature_dim = 0;  // J
  int expansion = 2;    // lambda
  int groups = 0;       // G
  int clusters = 0;     // K
  int hidden = 0;       // H
  int reduction = 16;   // r

  Tensor expand_w;  // J x (lambda*J)
  Tensor expand_b;  // lambda*J
  Tensor attn_w;    // (lambda*J) x G
  Tensor attn_b;    // G
  Tensor assign_w;  // (lambda*J) x (G*K)
  Tensor assign_b;  // G*K
  Tensor centers;   // K x (lambda*J/G)
  Tensor hidden_w;  // (K*lambda*J/G) x H
  Tensor hidden_b;  // H
  Tensor se_w1;     // H x (H/r)
  Tensor se_b1;     // H/r
  Tensor se_w2;     // (H/r) x H
  Tensor se_b2;     // H

  int group_dim() const { return expansion * feature_dim / groups; }

  static NeXtVladParams init(int feature_dim, int expansion, int groups, int clusters, int hidden,
                             int reduction, Rng& rng);
  ParamList params(const std::string& prefix);
};

// Linear expansion to lambda*J then reshape to [I, G, lambda*J/G].
Var nextvlad_expand_reshape(Graph& g, Var frames, NeXtVladParams& p);

// Per-(frame, group) sigmoid attention, [I x G], from the expanded [I x
// lambda*J] features.
Var nextvlad_group_attention(Graph& g, Var expanded, NeXtVladParams& p);

// Grouped VLAD descriptor, rows intra-normalized, flattened to
// [1 x (K * lambda*J/G)]. Exactly rounded over (frame, group) terms, hence
// bit-identical under frame permutations.
Var nextvlad_encode(Graph& g, Var frames, NeXtVladParams& p, double eps = 1e-12);

// Squeeze-excitation gate: h .* sigmoid(W2 relu(W1 h + b1) + b2).
Var secg(Graph& g, Var h, Var w1, Var b1, Var w2, Var b2);

// Trainable parameter counts, for comparing the bottleneck gate against a
// dense context gate of the same width.
std::int64_t secg_param_count(int hidden, int reduction);
std::int64_t context_gate_param_count(int hidden);

struct MixtureParams {
  int feature_dim = 0;
  int submodels = 0;
  Tensor gate_w;  // J x M
  Tensor gate_b;  // M

  static MixtureParams init(int feature_dim, int submodels, Rng& rng);
  ParamList params(const std::string& prefix);
};

// Softmax over submodels of w_m . frame_mean + b_m, as a [1 x M] row.
Var mixture_weights(Graph& g, Var frame_mean, MixtureParams& p);

// Weighted sum of per-submodel logit rows with the mixture weights.
Var mix_logits(Graph& g, const std::vector<Var>& submodel_logits, Var weights);

// One NeXtVLAD submodel: encoder, hidden projection, SECG, logistic head.
struct NeXtVladSubmodel {
  NeXtVladParams enc;
  Tensor logreg_w;  // H x C
  Tensor logreg_b;  // C

  static NeXtVladSubmodel init(int feature_dim, int expansion, int groups, int clusters, int hidden,
                               int reduction, int num_classes, Rng& rng);
  ParamList params(const std::string& prefix);
  Var forward_logits(Graph& g, Var frames);
};

// Three (configurable) NeXtVLAD submodels mixed by a gate on the frame mean.
struct MixNeXtVladModel {
  std::vector<NeXtVladSubmodel> submodels;
  MixtureParams mixture;

  static MixNeXtVladModel init(int feature_dim, int expansion, int groups, int clusters, int hidden,
                               int reduction, int num_classes, int submodels, Rng& rng);
  ParamList params();

  // (per-submodel logits, mixture logits)
  std::pair<std::vector<Var>, Var> forward_all_logits(Graph& g, const Tensor& frames);
  Var forward_probs(Graph& g, const Tensor& frames);
};

}  // namespace vsc
