#include "mosaic/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "mosaic/rng.hpp"

namespace mosaic {

void EncoderConfig::validate() const {
  if (layers < 0) throw std::invalid_argument("encoder config: layers must be >= 0");
  if (heads < 1) throw std::invalid_argument("encoder config: heads must be >= 1");
  if (model_dim < 1 || ff_dim < 1) throw std::invalid_argument("encoder config: dims must be >= 1");
  if (model_dim % heads != 0)
    throw std::invalid_argument("encoder config: model_dim must be divisible by heads");
  if (max_len < 2) throw std::invalid_argument("encoder config: max_len must be >= 2");
  if (vocab_size < Vocab::kNumSpecials)
    throw std::invalid_argument("encoder config: vocab_size must cover the special tokens");
  if (dropout < 0.0 || dropout >= 1.0)
    throw std::invalid_argument("encoder config: dropout must be in [0,1)");
}

std::vector<std::pair<std::string, Var>> EncoderWeights::parameters() const {
  std::vector<std::pair<std::string, Var>> params;
  params.emplace_back("tok_emb", token_embedding);
  params.emplace_back("pos_emb", position_embedding);
  for (size_t l = 0; l < layers.size(); ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    const LayerWeights& lw = layers[l];
    params.emplace_back(p + "attn_norm.gain", lw.attn_norm_gain);
    params.emplace_back(p + "attn_norm.bias", lw.attn_norm_bias);
    params.emplace_back(p + "wq", lw.wq);
    params.emplace_back(p + "bq", lw.bq);
    params.emplace_back(p + "wk", lw.wk);
    params.emplace_back(p + "wv", lw.wv);
    params.emplace_back(p + "bv", lw.bv);
    params.emplace_back(p + "wo", lw.wo);
    params.emplace_back(p + "bo", lw.bo);
    params.emplace_back(p + "ff_norm.gain", lw.ff_norm_gain);
    params.emplace_back(p + "ff_norm.bias", lw.ff_norm_bias);
    params.emplace_back(p + "w1", lw.w1);
    params.emplace_back(p + "b1", lw.b1);
    params.emplace_back(p + "w2", lw.w2);
    params.emplace_back(p + "b2", lw.b2);
  }
  params.emplace_back("final_norm.gain", final_norm_gain);
  params.emplace_back("final_norm.bias", final_norm_bias);
  return params;
}

EncoderWeights EncoderWeights::clone() const {
  EncoderWeights out;
  out.config = config;
  out.token_embedding = make_parameter(token_embedding.value(), "tok_emb");
  out.position_embedding = make_parameter(position_embedding.value(), "pos_emb");
  for (const auto& lw : layers) {
    LayerWeights c;
    c.attn_norm_gain = make_parameter(lw.attn_norm_gain.value());
    c.attn_norm_bias = make_parameter(lw.attn_norm_bias.value());
    c.wq = make_parameter(lw.wq.value());
    c.bq = make_parameter(lw.bq.value());
    c.wk = make_parameter(lw.wk.value());
    c.wv = make_parameter(lw.wv.value());
    c.bv = make_parameter(lw.bv.value());
    c.wo = make_parameter(lw.wo.value());
    c.bo = make_parameter(lw.bo.value());
    c.ff_norm_gain = make_parameter(lw.ff_norm_gain.value());
    c.ff_norm_bias = make_parameter(lw.ff_norm_bias.value());
    c.w1 = make_parameter(lw.w1.value());
    c.b1 = make_parameter(lw.b1.value());
    c.w2 = make_parameter(lw.w2.value());
    c.b2 = make_parameter(lw.b2.value());
    out.layers.push_back(std::move(c));
  }
  out.final_norm_gain = make_parameter(final_norm_gain.value());
  out.final_norm_bias = make_parameter(final_norm_bias.value());
  return out;
}

EncoderWeights init_weights(const EncoderConfig& config) {
  config.validate();
  Rng rng(mix_seed(config.seed, 0x1A17));
  const int64_t d = config.model_dim;
  constexpr double kInitStd = 0.02;

  auto gauss = [&](Shape shape) { return make_parameter(Tensor::gaussian(shape, rng, 0.0, kInitStd)); };
  auto zeros = [&](int64_t n) { return make_parameter(Tensor(Shape(n))); };
  auto ones = [&](int64_t n) { return make_parameter(Tensor::full(Shape(n), 1.0)); };

  EncoderWeights w;
  w.config = config;
  w.token_embedding = make_parameter(
      Tensor::gaussian(Shape(config.vocab_size, d), rng, 0.0, kInitStd), "tok_emb");
  w.position_embedding = make_parameter(
      Tensor::gaussian(Shape(config.max_len, d), rng, 0.0, kInitStd), "pos_emb");
  for (int64_t l = 0; l < config.layers; ++l) {
    LayerWeights lw;
    lw.attn_norm_gain = ones(d);
    lw.attn_norm_bias = zeros(d);
    lw.wq = gauss(Shape(d, d));
    lw.bq = zeros(d);
    lw.wk = gauss(Shape(d, d));
    lw.wv = gauss(Shape(d, d));
    lw.bv = zeros(d);
    lw.wo = gauss(Shape(d, d));
    lw.bo = zeros(d);
    lw.ff_norm_gain = ones(d);
    lw.ff_norm_bias = zeros(d);
    lw.w1 = gauss(Shape(d, config.ff_dim));
    lw.b1 = zeros(config.ff_dim);
    lw.w2 = gauss(Shape(config.ff_dim, d));
    lw.b2 = zeros(d);
    w.layers.push_back(std::move(lw));
  }
  w.final_norm_gain = ones(d);
  w.final_norm_bias = zeros(d);
  return w;
}

EncoderWeights empty_weights(const EncoderConfig& config) {
  config.validate();
  const int64_t d = config.model_dim;
  auto zeros = [](Shape shape) { return make_parameter(Tensor(shape)); };

  EncoderWeights w;
  w.config = config;
  w.token_embedding = make_parameter(Tensor(Shape(config.vocab_size, d)), "tok_emb");
  w.position_embedding = make_parameter(Tensor(Shape(config.max_len, d)), "pos_emb");
  for (int64_t l = 0; l < config.layers; ++l) {
    LayerWeights lw;
    lw.attn_norm_gain = zeros(Shape(d));
    lw.attn_norm_bias = zeros(Shape(d));
    lw.wq = zeros(Shape(d, d));
    lw.bq = zeros(Shape(d));
    lw.wk = zeros(Shape(d, d));
    lw.wv = zeros(Shape(d, d));
    lw.bv = zeros(Shape(d));
    lw.wo = zeros(Shape(d, d));
    lw.bo = zeros(Shape(d));
    lw.ff_norm_gain = zeros(Shape(d));
    lw.ff_norm_bias = zeros(Shape(d));
    lw.w1 = zeros(Shape(d, config.ff_dim));
    lw.b1 = zeros(Shape(config.ff_dim));
    lw.w2 = zeros(Shape(config.ff_dim, d));
    lw.b2 = zeros(Shape(d));
    w.layers.push_back(std::move(lw));
  }
  w.final_norm_gain = zeros(Shape(d));
  w.final_norm_bias = zeros(Shape(d));
  return w;
}

Var forward_states(const EncoderWeights& weights, const Encoding& encoding,
                   const std::vector<int64_t>* mask_positions, Rng* dropout_rng) {
  const EncoderConfig& cfg = weights.config;
  const int64_t len = encoding.length();
  if (len == 0) throw std::invalid_argument("forward_states: empty encoding");
  if (len > cfg.max_len) throw std::invalid_argument("forward_states: encoding exceeds max_len");

  std::vector<int64_t> ids = encoding.ids;
  for (int64_t id : ids)
    if (id < 0 || id >= cfg.vocab_size)
      throw std::out_of_range("forward_states: token id " + std::to_string(id) +
                              " outside vocab of size " + std::to_string(cfg.vocab_size));
  if (mask_positions) {
    for (int64_t p : *mask_positions) {
      if (p < 0 || p >= len) throw std::out_of_range("forward_states: mask position out of range");
      ids[static_cast<size_t>(p)] = Vocab::kMask;
    }
  }

  // PAD is visible to nothing: keys at PAD positions get probability zero.
  std::vector<char> key_valid(static_cast<size_t>(len));
  for (int64_t i = 0; i < len; ++i)
    key_valid[static_cast<size_t>(i)] = encoding.ids[static_cast<size_t>(i)] == Vocab::kPad ? 0 : 1;

  std::vector<int64_t> pos_ids(static_cast<size_t>(len));
  for (int64_t i = 0; i < len; ++i) pos_ids[static_cast<size_t>(i)] = i;

  Var x = ops::add(ops::gather_rows(weights.token_embedding, ids),
                   ops::gather_rows(weights.position_embedding, pos_ids));

  const int64_t head_dim = cfg.model_dim / cfg.heads;
  const double attn_scale = 1.0 / std::sqrt(static_cast<double>(head_dim));
  const bool use_dropout = cfg.dropout > 0.0 && dropout_rng != nullptr;

  for (const LayerWeights& lw : weights.layers) {
    Var h = ops::layer_norm(x, lw.attn_norm_gain, lw.attn_norm_bias);
    Var q = ops::add_rowvec(ops::matmul(h, lw.wq), lw.bq);
    Var k = ops::matmul(h, lw.wk);
    Var v = ops::add_rowvec(ops::matmul(h, lw.wv), lw.bv);
    std::vector<Var> head_ctx;
    for (int64_t hd = 0; hd < cfg.heads; ++hd) {
      Var qh = ops::slice_cols(q, hd * head_dim, head_dim);
      Var kh = ops::slice_cols(k, hd * head_dim, head_dim);
      Var vh = ops::slice_cols(v, hd * head_dim, head_dim);
      Var scores = ops::scale(ops::matmul_nt(qh, kh), attn_scale);
      Var probs = ops::softmax_rows_masked(scores, key_valid);
      head_ctx.push_back(ops::matmul(probs, vh));
    }
    Var ctx = cfg.heads == 1 ? head_ctx[0] : ops::concat_cols(head_ctx);
    Var attn_out = ops::add_rowvec(ops::matmul(ctx, lw.wo), lw.bo);
    if (use_dropout) attn_out = ops::dropout(attn_out, cfg.dropout, *dropout_rng);
    x = ops::add(x, attn_out);

    Var h2 = ops::layer_norm(x, lw.ff_norm_gain, lw.ff_norm_bias);
    Var ff = ops::add_rowvec(
        ops::matmul(ops::gelu(ops::add_rowvec(ops::matmul(h2, lw.w1), lw.b1)), lw.w2), lw.b2);
    if (use_dropout) ff = ops::dropout(ff, cfg.dropout, *dropout_rng);
    x = ops::add(x, ff);
  }
  return ops::layer_norm(x, weights.final_norm_gain, weights.final_norm_bias);
}

std::vector<int64_t> content_positions(const Encoding& encoding) {
  std::vector<int64_t> positions;
  for (int64_t i = 0; i < encoding.length(); ++i) {
    const int64_t id = encoding.ids[static_cast<size_t>(i)];
    if (id != Vocab::kPad && id != Vocab::kCls && id != Vocab::kSep) positions.push_back(i);
  }
  return positions;
}

Var mean_pool_graph(const Var& states, const Encoding& encoding) {
  auto positions = content_positions(encoding);
  if (positions.empty()) throw std::runtime_error("mean_pool: no content positions");
  return ops::l2_normalize(ops::mean_rows(states, positions));
}

SentenceEmbedding mean_pool(const Tensor& states, const Encoding& encoding) {
  NoGradGuard ng;
  Var pooled = mean_pool_graph(make_constant(states), encoding);
  SentenceEmbedding emb;
  emb.vector.assign(pooled.value().data(), pooled.value().data() + pooled.value().size());
  emb.normalized = true;
  return emb;
}

SentenceEmbedding embed_sentence(const EncoderWeights& weights, const Vocab& vocab,
                                 const std::string& text, int64_t max_len) {
  NoGradGuard ng;
  Encoding enc = encode(vocab, text, max_len);
  Var states = forward_states(weights, enc);
  Var pooled = mean_pool_graph(states, enc);
  SentenceEmbedding emb;
  emb.vector.assign(pooled.value().data(), pooled.value().data() + pooled.value().size());
  emb.normalized = true;
  return emb;
}

Var mlm_logits_graph(const EncoderWeights& weights, const Var& state,
                     const std::vector<int64_t>& candidate_ids) {
  if (candidate_ids.empty()) throw std::invalid_argument("mlm logits: empty candidate set");
  return ops::matvec(ops::gather_rows(weights.token_embedding, candidate_ids), state);
}

Tensor mlm_domain_logits(const EncoderWeights& weights, const Tensor& state,
                         const std::vector<int64_t>& candidate_ids) {
  NoGradGuard ng;
  return mlm_logits_graph(weights, make_constant(state), candidate_ids).value();
}

}  // namespace mosaic
