// SPDX-License-Identifier: Apache-2.0
//
// Gated NetVLAD video encoder: soft cluster assignment, residual
// aggregation with per-cluster intra-normalization, hidden projection and
// context gating, followed by an MoE head whose logits pass through a second
// context gate.

#pragma once

#include <string>

#include "vsc/classifier.hpp"
#include "vsc/tensor.hpp"

namespace vsc {

class Rng;

struct NetVladParams {
  int feature_dim = 0;  // J
  int clusters = 0;     // K
  int hidden = 0;       // H
  Tensor centers;       // K x J
  Tensor assign_w;      // K x J
  Tensor assign_b;      // K
  Tensor hidden_w;      // (K*J) x H
  Tensor hidden_b;      // H
  Tensor cg_w;          // H x H
  Tensor cg_b;          // H

  static NetVladParams init(int feature_dim, int clusters, int hidden, Rng& rng);
  ParamList params(const std::string& prefix);
};

// Row-wise softmax over clusters of w_k . x + b_k; frames is [I x J],
// result [I x K].
Var netvlad_soft_assign(Graph& g, Var frames, NetVladParams& p);

// Aggregated residual descriptor, one row per cluster, each row
// L2-normalized across the feature dimension, flattened to [1 x (K*J)].
// The frame sum is exactly rounded, so the output is bit-identical under
// any permutation of the input frames.
Var netvlad_encode(Graph& g, Var frames, NetVladParams& p, double eps = 1e-12);

// z = sigmoid(W y + b) .* y for a [1 x H] row.
Var context_gate(Graph& g, Var y, Var w, Var b);

// Full gated model: encoder + MoE with a context gate on the mixture
// logits.
struct GatedNetVladModel {
  NetVladParams vlad;
  MoEParams moe;
  Tensor out_cg_w;  // C x C
  Tensor out_cg_b;  // C

  static GatedNetVladModel init(int feature_dim, int clusters, int hidden, int num_classes,
                                int experts, Rng& rng);
  ParamList params();

  Var forward_logits(Graph& g, const Tensor& frames);
  Var forward_probs(Graph& g, const Tensor& frames);
};

}  // namespace vsc
