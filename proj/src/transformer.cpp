// SPDX-License-Identifier: Apache-2.0

#include "vsc/transformer.hpp"

#include <cmath>
#include <stdexcept>

#include "vsc/rng.hpp"

namespace vsc {

namespace {
constexpr double kLayerNormEps = 1e-6;
}

AggMode agg_mode_from_string(const std::string& s) {
  if (s == "first") return AggMode::kFirst;
  if (s == "mean") return AggMode::kMean;
  if (s == "attention") return AggMode::kAttention;
  throw std::invalid_argument("unknown aggregation mode: " + s);
}

std::string to_string(AggMode m) {
  switch (m) {
    case AggMode::kFirst: return "first";
    case AggMode::kMean: return "mean";
    case AggMode::kAttention: return "attention";
  }
  return "?";
}

TransformerParams TransformerParams::init(int input_dim, int d_model, int heads, int num_layers,
                                          int max_len, Rng& rng, bool use_positional) {
  if (num_layers < 0) throw std::invalid_argument("transformer: negative layer count");
  if (d_model % heads != 0)
    throw std::invalid_argument("transformer: d_model " + std::to_string(d_model) +
                                " is not divisible by " + std::to_string(heads) + " heads");
  TransformerParams p;
  p.input_dim = input_dim;
  p.d_model = d_model;
  p.heads = heads;
  p.num_layers = num_layers;
  p.d_ff = 4 * d_model;
  p.max_len = max_len;
  p.use_positional = use_positional;
  p.in_w = Tensor::fan_in_init({input_dim, d_model}, input_dim, rng);
  p.in_b = Tensor::zeros({d_model});
  p.pos = use_positional ? Tensor::fan_in_init({max_len, d_model}, d_model, rng)
                         : Tensor::zeros({max_len, d_model});
  for (int l = 0; l < num_layers; ++l) {
    Layer layer;
    layer.wq = Tensor::fan_in_init({d_model, d_model}, d_model, rng);
    layer.wk = Tensor::fan_in_init({d_model, d_model}, d_model, rng);
    layer.wv = Tensor::fan_in_init({d_model, d_model}, d_model, rng);
    layer.wo = Tensor::fan_in_init({d_model, d_model}, d_model, rng);
    layer.ff_w1 = Tensor::fan_in_init({d_model, p.d_ff}, d_model, rng);
    layer.ff_b1 = Tensor::zeros({p.d_ff});
    layer.ff_w2 = Tensor::fan_in_init({p.d_ff, d_model}, p.d_ff, rng);
    layer.ff_b2 = Tensor::zeros({d_model});
    layer.ln1_g = Tensor::full({d_model}, 1.0);
    layer.ln1_b = Tensor::zeros({d_model});
    layer.ln2_g = Tensor::full({d_model}, 1.0);
    layer.ln2_b = Tensor::zeros({d_model});
    p.layers.push_back(std::move(layer));
  }
  p.pool_w = Tensor::zeros({d_model});
  return p;
}

ParamList TransformerParams::params(const std::string& prefix) {
  ParamList list = {{prefix + "/in_w", &in_w}, {prefix + "/in_b", &in_b}, {prefix + "/pos", &pos}};
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const std::string lp = prefix + "/layer" + std::to_string(l);
    Layer& layer = layers[l];
    list.push_back({lp + "/wq", &layer.wq});
    list.push_back({lp + "/wk", &layer.wk});
    list.push_back({lp + "/wv", &layer.wv});
    list.push_back({lp + "/wo", &layer.wo});
    list.push_back({lp + "/ff_w1", &layer.ff_w1});
    list.push_back({lp + "/ff_b1", &layer.ff_b1});
    list.push_back({lp + "/ff_w2", &layer.ff_w2});
    list.push_back({lp + "/ff_b2", &layer.ff_b2});
    list.push_back({lp + "/ln1_g", &layer.ln1_g});
    list.push_back({lp + "/ln1_b", &layer.ln1_b});
    list.push_back({lp + "/ln2_g", &layer.ln2_g});
    list.push_back({lp + "/ln2_b", &layer.ln2_b});
  }
  list.push_back({prefix + "/pool_w", &pool_w});
  return list;
}

Var scaled_dot_attention(Graph& g, Var q, Var k, Var v) {
  const Tensor &tq = g.val(q), &tk = g.val(k), &tv = g.val(v);
  if (tq.rank() != 2 || tk.rank() != 2 || tv.rank() != 2)
    throw std::invalid_argument("attention: rank-2 inputs required");
  if (tq.cols() != tk.cols())
    throw std::invalid_argument("attention: query dim " + shape_str(tq.shape) + " vs key dim " +
                                shape_str(tk.shape));
  if (tk.rows() != tv.rows())
    throw std::invalid_argument("attention: key/value row mismatch");
  const double scale = 1.0 / std::sqrt(static_cast<double>(tq.cols()));
  Var scores = g.affine(g.matmul(q, g.transpose(k)), scale, 0.0);
  return g.matmul(g.softmax(scores, 1), v);
}

Var multi_head(Graph& g, Var q, Var k, Var v, Var wq, Var wk, Var wv, Var wo, int heads) {
  const int d_model = g.val(wq).rows();
  if (d_model % heads != 0)
    throw std::invalid_argument("multi_head: d_model " + std::to_string(d_model) +
                                " not divisible by " + std::to_string(heads) + " heads");
  const int d_head = d_model / heads;
  Var pq = g.matmul(q, wq), pk = g.matmul(k, wk), pv = g.matmul(v, wv);
  std::vector<Var> head_outs;
  head_outs.reserve(static_cast<std::size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    Var hq = g.narrow(pq, 1, h * d_head, d_head);
    Var hk = g.narrow(pk, 1, h * d_head, d_head);
    Var hv = g.narrow(pv, 1, h * d_head, d_head);
    head_outs.push_back(scaled_dot_attention(g, hq, hk, hv));
  }
  Var merged = heads == 1 ? head_outs[0] : g.concat(head_outs, 1);
  return g.matmul(merged, wo);
}

Var bert_encode(Graph& g, Var frames, TransformerParams& p) {
  const Tensor& f = g.val(frames);
  if (f.rank() != 2 || f.cols() != p.input_dim)
    throw std::invalid_argument("bert_encode: frames must be [L x " + std::to_string(p.input_dim) +
                                "], got " + shape_str(f.shape));
  const int len = f.rows();
  if (len > p.max_len)
    throw std::invalid_argument("bert_encode: " + std::to_string(len) + " frames exceed max length " +
                                std::to_string(p.max_len));
  Var x = g.add_bias(g.matmul(frames, g.param(p.in_w)), g.param(p.in_b));
  if (p.use_positional) x = g.add(x, g.narrow(g.param(p.pos), 0, 0, len));
  for (auto& layer : p.layers) {
    Var attn = multi_head(g, x, x, x, g.param(layer.wq), g.param(layer.wk), g.param(layer.wv),
                          g.param(layer.wo), p.heads);
    x = g.layer_norm(g.add(x, attn), g.param(layer.ln1_g), g.param(layer.ln1_b), kLayerNormEps);
    Var ff = g.add_bias(g.matmul(x, g.param(layer.ff_w1)), g.param(layer.ff_b1));
    ff = g.add_bias(g.matmul(g.relu(ff), g.param(layer.ff_w2)), g.param(layer.ff_b2));
    x = g.layer_norm(g.add(x, ff), g.param(layer.ln2_g), g.param(layer.ln2_b), kLayerNormEps);
  }
  return x;
}

Var aggregate(Graph& g, Var encoded, AggMode mode, Var pool_w) {
  const Tensor& b = g.val(encoded);
  if (b.rank() != 2) throw std::invalid_argument("aggregate: rank-2 input required");
  const int len = b.rows(), dm = b.cols();
  switch (mode) {
    case AggMode::kFirst:
      return g.narrow(encoded, 0, 0, 1);
    case AggMode::kMean: {
      Var weights = g.constant({1, len}, std::vector<double>(static_cast<std::size_t>(len), 1.0 / len));
      return g.matmul(weights, encoded);
    }
    case AggMode::kAttention: {
      Var scores = g.matmul(encoded, g.reshape(pool_w, {dm, 1}));  // [L x 1]
      Var attn = g.softmax(scores, 0);
      return g.matmul(g.transpose(attn), encoded);  // [1 x d_m]
    }
  }
  throw std::invalid_argument("aggregate: bad mode");
}

CrossModalParams CrossModalParams::init(int visual_dim, int audio_dim, int visual_d_model,
                                        int audio_d_model, int heads, int num_layers, int max_len,
                                        Rng& rng) {
  CrossModalParams p;
  p.visual = TransformerParams::init(visual_dim, visual_d_model, heads, num_layers, max_len, rng);
  p.audio = TransformerParams::init(audio_dim, audio_d_model, heads, num_layers, max_len, rng);
  p.cross = TransformerParams::init(visual_d_model + audio_d_model, visual_d_model + audio_d_model,
                                    heads, num_layers, max_len, rng);
  return p;
}

ParamList CrossModalParams::params(const std::string& prefix) {
  ParamList list = visual.params(prefix + "/visual");
  for (auto& e : audio.params(prefix + "/audio")) list.push_back(e);
  for (auto& e : cross.params(prefix + "/cross")) list.push_back(e);
  return list;
}

Var cross_modal_encode(Graph& g, Var visual_frames, Var audio_frames, CrossModalParams& p) {
  const Tensor &tv = g.val(visual_frames), &ta = g.val(audio_frames);
  if (tv.rank() != 2 || ta.rank() != 2 || tv.rows() != ta.rows())
    throw std::invalid_argument("cross_modal_encode: towers need per-frame aligned inputs, got " +
                                shape_str(tv.shape) + " and " + shape_str(ta.shape));
  Var bv = bert_encode(g, visual_frames, p.visual);
  Var ba = bert_encode(g, audio_frames, p.audio);
  return bert_encode(g, g.concat({bv, ba}, 1), p.cross);
}

BertModel BertModel::init(int input_dim, int d_model, int heads, int num_layers, int max_len,
                          int num_classes, int experts, AggMode agg, Rng& rng) {
  BertModel m;
  m.encoder = TransformerParams::init(input_dim, d_model, heads, num_layers, max_len, rng);
  m.moe = MoEParams::init(d_model, num_classes, experts, rng);
  m.agg = agg;
  return m;
}

ParamList BertModel::params() {
  ParamList list = encoder.params("bert");
  for (auto& e : moe.params("moe")) list.push_back(e);
  return list;
}

Var BertModel::forward_probs(Graph& g, const Tensor& frames) {
  Var encoded = bert_encode(g, g.constant(frames), encoder);
  Var video = aggregate(g, encoded, agg, g.param(encoder.pool_w));
  return moe_classify(g, video, moe);
}

BertCrossModel BertCrossModel::init(int visual_dim, int audio_dim, int visual_d_model,
                                    int audio_d_model, int heads, int num_layers, int max_len,
                                    int num_classes, int experts, AggMode agg, Rng& rng) {
  BertCrossModel m;
  m.towers = CrossModalParams::init(visual_dim, audio_dim, visual_d_model, audio_d_model, heads,
                                    num_layers, max_len, rng);
  m.moe = MoEParams::init(visual_d_model + audio_d_model, num_classes, experts, rng);
  m.agg = agg;
  m.visual_dim = visual_dim;
  m.audio_dim = audio_dim;
  return m;
}

ParamList BertCrossModel::params() {
  ParamList list = towers.params("bert_cross");
  for (auto& e : moe.params("moe")) list.push_back(e);
  return list;
}

Var BertCrossModel::forward_probs(Graph& g, const Tensor& frames) {
  if (frames.rank() != 2 || frames.cols() != visual_dim + audio_dim)
    throw std::invalid_argument("cross model: frames must be [L x " +
                                std::to_string(visual_dim + audio_dim) + "], got " +
                                shape_str(frames.shape));
  Var f = g.constant(frames);
  Var visual = g.narrow(f, 1, 0, visual_dim);
  Var audio = g.narrow(f, 1, visual_dim, audio_dim);
  Var encoded = cross_modal_encode(g, visual, audio, towers);
  Var video = aggregate(g, encoded, agg, g.param(towers.cross.pool_w));
  return moe_classify(g, video, moe);
}

}  // namespace vsc
