#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mosaic/autograd.hpp"
#include "mosaic/encoder.hpp"
#include "mosaic/tokenizer.hpp"

namespace mosaic {

enum class MaskScope { domain_only, all_tokens };

struct MaskingConfig {
  double rate = 0.15;
  MaskScope scope = MaskScope::domain_only;
  uint64_t seed = 0;

  void validate() const;
};

struct MaskSlot {
  int64_t sentence = 0;  // index into the batch
  int64_t position = 0;  // token position within the sentence
  int64_t target_id = 0; // pre-mask token id
};

// Queries with their mask slots; documents stay unmasked. The encodings keep
// the original ids — MASK substitution happens inside the forward pass.
struct MaskedBatch {
  std::vector<Encoding> queries;
  std::vector<std::vector<int64_t>> mask_positions;  // per query, ascending
  std::vector<MaskSlot> slots;
  std::vector<Encoding> documents;
  std::vector<int64_t> pair_indices;
};

enum class Scoring { dot, cosine_over_tau };

struct JointLossConfig {
  double alpha = 0.3;
  Scoring scoring = Scoring::cosine_over_tau;
  double tau = 0.05;
  // When set, document encodings receive the same Bernoulli masking as
  // queries instead of staying clean.
  bool mask_documents = false;

  void validate() const;
};

// Independently masks each eligible query position with probability rate.
// Eligible means is_domain under domain_only, any non-special token under
// all_tokens; specials are never eligible. Deterministic in config.seed.
MaskedBatch apply_domain_masking(const std::vector<Encoding>& queries, const Vocab& vocab,
                                 const MaskingConfig& config);

// InfoNCE over in-batch negatives: for row i the positive is document i and
// every document in the batch is a candidate. Scores are raw dot products or
// cosine/tau. Batch size must be at least 2.
Var contrastive_loss(const std::vector<Var>& query_embeddings,
                     const std::vector<Var>& doc_embeddings, const JointLossConfig& config);
double contrastive_loss_value(const std::vector<std::vector<double>>& query_embeddings,
                              const std::vector<std::vector<double>>& doc_embeddings,
                              const JointLossConfig& config);

// Candidate ids for masked-token scoring: the domain set, or every
// non-special token under the all-token variant.
std::vector<int64_t> mlm_candidates(const Vocab& vocab, MaskScope scope);

// Mean cross-entropy over mask slots, scored against the restricted
// candidate set only. Zero slots contribute an exact 0.
Var mlm_domain_loss(const std::vector<Var>& query_states, const MaskedBatch& batch,
                    const EncoderWeights& weights, const Vocab& vocab, MaskScope scope);

// alpha * mlm + cl.
Var joint_loss(const Var& mlm, const Var& cl, double alpha);
double joint_loss_value(double mlm, double cl, double alpha);

}  // namespace mosaic
