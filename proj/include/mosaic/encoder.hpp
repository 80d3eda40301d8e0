#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mosaic/autograd.hpp"
#include "mosaic/tokenizer.hpp"

namespace mosaic {

class Rng;

struct EncoderConfig {
  int64_t layers = 2;
  int64_t heads = 2;
  int64_t model_dim = 64;
  int64_t ff_dim = 256;
  int64_t max_len = 64;
  int64_t vocab_size = 0;
  uint64_t seed = 0;
  double dropout = 0.0;

  void validate() const;
};

// No key-projection bias: a constant key offset shifts every attention row
// uniformly and cancels in the softmax, leaving a dead parameter.
struct LayerWeights {
  Var attn_norm_gain, attn_norm_bias;
  Var wq, bq, wk, wv, bv, wo, bo;
  Var ff_norm_gain, ff_norm_bias;
  Var w1, b1, w2, b2;
};

// Pre-norm transformer weights. token_embedding is the tied matrix: it is
// both the input lookup table and the MLM scoring head, so one update moves
// both views.
struct EncoderWeights {
  EncoderConfig config;
  Var token_embedding;     // [V x d]
  Var position_embedding;  // [max_len x d]
  std::vector<LayerWeights> layers;
  Var final_norm_gain, final_norm_bias;

  // Canonical (name, var) list; fixed order shared by the optimizer and the
  // checkpoint format.
  std::vector<std::pair<std::string, Var>> parameters() const;
  EncoderWeights clone() const;
};

struct SentenceEmbedding {
  std::vector<double> vector;
  bool normalized = false;
};

// Gaussian(0, 0.02) init for embeddings and projections, zero biases,
// layer-norm gain 1 / bias 0. Deterministic in config.seed.
EncoderWeights init_weights(const EncoderConfig& config);

// All-zero weight structure of the right shapes; checkpoint loading fills it.
EncoderWeights empty_weights(const EncoderConfig& config);

// Final hidden states [L x d]. Ids listed in mask_positions are replaced by
// MASK before the embedding lookup; PAD positions are excluded from
// attention. rng is only consulted when config.dropout > 0.
Var forward_states(const EncoderWeights& weights, const Encoding& encoding,
                   const std::vector<int64_t>* mask_positions = nullptr, Rng* dropout_rng = nullptr);

// Positions that contribute to the pooled sentence vector: everything that
// is not PAD, CLS or SEP.
std::vector<int64_t> content_positions(const Encoding& encoding);

// Mean of the content-position states, unit-normalized.
Var mean_pool_graph(const Var& states, const Encoding& encoding);
SentenceEmbedding mean_pool(const Tensor& states, const Encoding& encoding);

// encode -> forward -> pool with no masking and no gradient recording.
SentenceEmbedding embed_sentence(const EncoderWeights& weights, const Vocab& vocab,
                                 const std::string& text, int64_t max_len);

// Tied-head MLM scores: logit j = <state, e[candidate j]>. No bias, no extra
// projection.
Var mlm_logits_graph(const EncoderWeights& weights, const Var& state,
                     const std::vector<int64_t>& candidate_ids);
Tensor mlm_domain_logits(const EncoderWeights& weights, const Tensor& state,
                         const std::vector<int64_t>& candidate_ids);

}  // namespace mosaic
