#include "mosaic/objectives.hpp"

#include <algorithm>
#include <stdexcept>
#include <unordered_map>

#include "mosaic/rng.hpp"

namespace mosaic {

void MaskingConfig::validate() const {
  if (rate < 0.0 || rate > 1.0) throw std::invalid_argument("masking: rate must be in [0,1]");
}

void JointLossConfig::validate() const {
  if (alpha < 0.0) throw std::invalid_argument("joint loss: alpha must be non-negative");
  if (tau <= 0.0) throw std::invalid_argument("joint loss: tau must be positive");
}

MaskedBatch apply_domain_masking(const std::vector<Encoding>& queries, const Vocab& vocab,
                                 const MaskingConfig& config) {
  config.validate();
  Rng rng(mix_seed(config.seed, 0x3A5C));
  MaskedBatch batch;
  batch.queries = queries;
  batch.mask_positions.resize(queries.size());
  for (size_t s = 0; s < queries.size(); ++s) {
    const Encoding& enc = queries[s];
    if (enc.ids.size() != enc.is_domain.size())
      throw std::invalid_argument("apply_domain_masking: encoding flag length mismatch");
    for (int64_t p = 0; p < enc.length(); ++p) {
      const int64_t id = enc.ids[static_cast<size_t>(p)];
      if (vocab.is_special(id)) continue;
      const bool eligible = config.scope == MaskScope::domain_only
                                ? enc.is_domain[static_cast<size_t>(p)] != 0
                                : true;
      if (!eligible) continue;
      if (rng.uniform01() < config.rate) {
        batch.mask_positions[s].push_back(p);
        batch.slots.push_back({static_cast<int64_t>(s), p, id});
      }
    }
  }
  return batch;
}

namespace {

Var scores_matrix(const std::vector<Var>& query_embeddings, const std::vector<Var>& doc_embeddings,
                  const JointLossConfig& config) {
  if (config.scoring == Scoring::dot) {
    return ops::matmul_nt(ops::stack_rows(query_embeddings), ops::stack_rows(doc_embeddings));
  }
  std::vector<Var> q_unit, d_unit;
  q_unit.reserve(query_embeddings.size());
  d_unit.reserve(doc_embeddings.size());
  for (const auto& q : query_embeddings) q_unit.push_back(ops::l2_normalize(q));
  for (const auto& d : doc_embeddings) d_unit.push_back(ops::l2_normalize(d));
  return ops::scale(ops::matmul_nt(ops::stack_rows(q_unit), ops::stack_rows(d_unit)),
                    1.0 / config.tau);
}

}  // namespace

Var contrastive_loss(const std::vector<Var>& query_embeddings,
                     const std::vector<Var>& doc_embeddings, const JointLossConfig& config) {
  config.validate();
  const int64_t b = static_cast<int64_t>(query_embeddings.size());
  if (b < 2) throw std::invalid_argument("contrastive_loss: need at least 2 pairs for in-batch negatives");
  if (doc_embeddings.size() != query_embeddings.size())
    throw std::invalid_argument("contrastive_loss: query/document count mismatch");

  Var scores = scores_matrix(query_embeddings, doc_embeddings, config);
  std::vector<Var> terms;
  terms.reserve(static_cast<size_t>(b));
  for (int64_t i = 0; i < b; ++i) terms.push_back(ops::cross_entropy(ops::row(scores, i), i));
  return ops::mean(terms);
}

double contrastive_loss_value(const std::vector<std::vector<double>>& query_embeddings,
                              const std::vector<std::vector<double>>& doc_embeddings,
                              const JointLossConfig& config) {
  NoGradGuard ng;
  std::vector<Var> q, d;
  for (const auto& v : query_embeddings)
    q.push_back(make_constant(Tensor(Shape(static_cast<int64_t>(v.size())), v)));
  for (const auto& v : doc_embeddings)
    d.push_back(make_constant(Tensor(Shape(static_cast<int64_t>(v.size())), v)));
  return contrastive_loss(q, d, config).value().item();
}

std::vector<int64_t> mlm_candidates(const Vocab& vocab, MaskScope scope) {
  return scope == MaskScope::domain_only ? vocab.domain_ids_sorted() : vocab.content_ids();
}

Var mlm_domain_loss(const std::vector<Var>& query_states, const MaskedBatch& batch,
                    const EncoderWeights& weights, const Vocab& vocab, MaskScope scope) {
  if (query_states.size() != batch.queries.size())
    throw std::invalid_argument("mlm_domain_loss: states/batch size mismatch");
  if (batch.slots.empty()) return scalar_constant(0.0);

  const std::vector<int64_t> candidates = mlm_candidates(vocab, scope);
  if (candidates.empty()) throw std::runtime_error("mlm_domain_loss: empty candidate set");
  std::unordered_map<int64_t, int64_t> candidate_index;
  for (size_t i = 0; i < candidates.size(); ++i)
    candidate_index[candidates[i]] = static_cast<int64_t>(i);

  std::vector<Var> terms;
  terms.reserve(batch.slots.size());
  for (const MaskSlot& slot : batch.slots) {
    auto it = candidate_index.find(slot.target_id);
    if (it == candidate_index.end())
      throw std::runtime_error("mlm_domain_loss: target token '" + vocab.token(slot.target_id) +
                               "' is not in the candidate set");
    Var state = ops::row(query_states[static_cast<size_t>(slot.sentence)], slot.position);
    Var logits = mlm_logits_graph(weights, state, candidates);
    terms.push_back(ops::cross_entropy(logits, it->second));
  }
  return ops::mean(terms);
}

Var joint_loss(const Var& mlm, const Var& cl, double alpha) {
  if (alpha < 0.0) throw std::invalid_argument("joint_loss: alpha must be non-negative");
  if (mlm.value().item() < 0.0 || cl.value().item() < 0.0)
    throw std::invalid_argument("joint_loss: loss terms must be non-negative");
  return ops::axpby(alpha, mlm, 1.0, cl);
}

double joint_loss_value(double mlm, double cl, double alpha) {
  if (alpha < 0.0) throw std::invalid_argument("joint_loss: alpha must be non-negative");
  if (mlm < 0.0 || cl < 0.0) throw std::invalid_argument("joint_loss: loss terms must be non-negative");
  return alpha * mlm + cl;
}

}  // namespace mosaic
