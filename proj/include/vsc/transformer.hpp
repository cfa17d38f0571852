// SPDX-License-Identifier: Apache-2.0
//
// BERT-style frame aggregator: multi-head self-attention stack over frame
// features with post-norm residual blocks, three pooling modes, and an
// optional two-tower cross-modal variant that fuses visual and audio
// streams through a third transformer.

#pragma once

#include <string>
#include <vector>

#include "vsc/classifier.hpp"
#include "vsc/tensor.hpp"

namespace vsc {

class Rng;

enum class AggMode { kFirst, kMean, kAttention };

AggMode agg_mode_from_string(const std::string& s);
std::string to_string(AggMode m);

struct TransformerParams {
  int input_dim = 0;
  int d_model = 0;
  int heads = 1;
  int num_layers = 0;
  int d_ff = 0;
  int max_len = 0;
  bool use_positional = true;

  Tensor in_w;  // d_in x d_m
  Tensor in_b;  // d_m
  Tensor pos;   // max_len x d_m

  struct Layer {
    Tensor wq, wk, wv;  // d_m x d_m, heads packed along columns
    Tensor wo;          // d_m x d_m
    Tensor ff_w1;       // d_m x d_ff
    Tensor ff_b1;       // d_ff
    Tensor ff_w2;       // d_ff x d_m
    Tensor ff_b2;       // d_m
    Tensor ln1_g, ln1_b, ln2_g, ln2_b;  // d_m
  };
  std::vector<Layer> layers;

  Tensor pool_w;  // d_m, attention pooling weight

  static TransformerParams init(int input_dim, int d_model, int heads, int num_layers, int max_len,
                                Rng& rng, bool use_positional = true);
  ParamList params(const std::string& prefix);
};

// softmax(Q K^T / sqrt(d_k)) V for [L x d_k] queries/keys and [L x d_v]
// values.
Var scaled_dot_attention(Graph& g, Var q, Var k, Var v);

// Concat over heads of per-head attention with packed projections, then the
// output projection.
Var multi_head(Graph& g, Var q, Var k, Var v, Var wq, Var wk, Var wv, Var wo, int heads);

// Input projection, positional embeddings, then the layer stack. Returns
// [L x d_m].
Var bert_encode(Graph& g, Var frames, TransformerParams& p);

// Pools encoder rows into a [1 x d_m] video vector.
Var aggregate(Graph& g, Var encoded, AggMode mode, Var pool_w);

struct CrossModalParams {
  TransformerParams visual;
  TransformerParams audio;
  TransformerParams cross;

  static CrossModalParams init(int visual_dim, int audio_dim, int visual_d_model, int audio_d_model,
                               int heads, int num_layers, int max_len, Rng& rng);
  ParamList params(const std::string& prefix);
};

// T_cross([T_visual(F_v); T_audio(F_a)]) with per-frame concatenation.
Var cross_modal_encode(Graph& g, Var visual_frames, Var audio_frames, CrossModalParams& p);

// Single-tower BERT classifier over concatenated visual+audio frames.
struct BertModel {
  TransformerParams encoder;
  MoEParams moe;
  AggMode agg = AggMode::kMean;

  static BertModel init(int input_dim, int d_model, int heads, int num_layers, int max_len,
                        int num_classes, int experts, AggMode agg, Rng& rng);
  ParamList params();
  Var forward_probs(Graph& g, const Tensor& frames);
};

// Two-tower cross-modal BERT classifier; frames carry visual columns first.
struct BertCrossModel {
  CrossModalParams towers;
  MoEParams moe;
  AggMode agg = AggMode::kMean;
  int visual_dim = 0;
  int audio_dim = 0;

  static BertCrossModel init(int visual_dim, int audio_dim, int visual_d_model, int audio_d_model,
                             int heads, int num_layers, int max_len, int num_classes, int experts,
                             AggMode agg, Rng& rng);
  ParamList params();
  Var forward_probs(Graph& g, const Tensor& frames);
};

}  // namespace vsc
