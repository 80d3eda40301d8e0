#include "mosaic/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "mosaic/io.hpp"
#include "mosaic/rng.hpp"

namespace mosaic {

std::string stage_name(Stage stage) {
  switch (stage) {
    case Stage::stage1: return "stage1";
    case Stage::stage2: return "stage2";
    case Stage::stage3: return "stage3";
  }
  throw std::logic_error("stage_name: bad stage");
}

Stage parse_stage(const std::string& name) {
  if (name == "stage1") return Stage::stage1;
  if (name == "stage2") return Stage::stage2;
  if (name == "stage3") return Stage::stage3;
  throw std::invalid_argument("unknown stage '" + name + "'");
}

void StageConfig::validate() const {
  if (epochs < 1) throw std::invalid_argument("stage config: epochs must be >= 1");
  if (warmup_fraction < 0.0 || warmup_fraction >= 1.0)
    throw std::invalid_argument("stage config: warmup_fraction must be in [0,1)");
  if (max_lr < 0.0) throw std::invalid_argument("stage config: max_lr must be non-negative");
  if (weight_decay < 0.0) throw std::invalid_argument("stage config: weight_decay must be non-negative");
  if (stage != Stage::stage1 && batch_size < 2)
    throw std::invalid_argument("stage config: batch_size must be >= 2 for training stages");
  masking.validate();
  joint.validate();
}

Checkpoint Checkpoint::clone() const {
  Checkpoint out;
  out.vocab = vocab;
  out.weights = weights.clone();
  out.opt_state = opt_state;
  out.stage_label = stage_label;
  return out;
}

Checkpoint make_initial_checkpoint(EncoderConfig config, Vocab vocab) {
  config.vocab_size = vocab.size();
  Checkpoint ck;
  ck.vocab = std::move(vocab);
  ck.weights = init_weights(config);
  ck.stage_label = "init";
  return ck;
}

void adam_step(const std::vector<std::pair<std::string, Var>>& params,
               const std::vector<Tensor>& grads, TrainState& state, double lr,
               const AdamSettings& settings) {
  if (params.size() != grads.size())
    throw std::invalid_argument("adam_step: parameter/gradient count mismatch");
  state.step += 1;
  const double bc1 = 1.0 - std::pow(settings.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(settings.beta2, static_cast<double>(state.step));

  for (size_t i = 0; i < params.size(); ++i) {
    const std::string& name = params[i].first;
    Var param = params[i].second;
    const Tensor& g = grads[i];
    if (g.shape() != param.value().shape())
      throw std::invalid_argument("adam_step: gradient shape mismatch for '" + name + "'");
    if (!g.all_finite())
      throw std::runtime_error("adam_step: non-finite gradient for parameter '" + name + "'");

    auto mit = state.m.find(name);
    if (mit == state.m.end()) {
      mit = state.m.emplace(name, Tensor(g.shape())).first;
      state.v.emplace(name, Tensor(g.shape()));
    }
    Tensor& m = mit->second;
    Tensor& v = state.v.at(name);
    if (m.shape() != g.shape())
      throw std::invalid_argument("adam_step: stale moment shape for '" + name + "'");

    Tensor& p = param.mutable_value();
    const int64_t n = p.size();
    for (int64_t j = 0; j < n; ++j) {
      m[j] = settings.beta1 * m[j] + (1.0 - settings.beta1) * g[j];
      v[j] = settings.beta2 * v[j] + (1.0 - settings.beta2) * g[j] * g[j];
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      const double decay = lr * settings.weight_decay * p[j];
      p[j] -= lr * mhat / (std::sqrt(vhat) + settings.eps) + decay;
    }
    check_finite(p, "adam_step");
  }
}

double lr_schedule(int64_t step, int64_t total_steps, double max_lr, double warmup_fraction) {
  if (total_steps <= 0) throw std::invalid_argument("lr_schedule: total_steps must be positive");
  if (step < 0 || step > total_steps) throw std::invalid_argument("lr_schedule: step out of range");
  if (warmup_fraction < 0.0 || warmup_fraction >= 1.0)
    throw std::invalid_argument("lr_schedule: warmup_fraction must be in [0,1)");
  if (step == total_steps) return 0.0;
  const int64_t warmup =
      static_cast<int64_t>(std::ceil(warmup_fraction * static_cast<double>(total_steps)));
  if (warmup > 0 && step <= warmup)
    return max_lr * static_cast<double>(step) / static_cast<double>(warmup);
  return max_lr * static_cast<double>(total_steps - step) / static_cast<double>(total_steps - warmup);
}

std::string history_csv(const std::vector<HistoryRow>& rows) {
  std::string out = "step,stage,loss,mlm_loss,cl_loss,lr\n";
  for (const auto& r : rows) {
    out += std::to_string(r.step);
    out += ',';
    out += r.stage;
    out += ',';
    out += format_double(r.loss);
    out += ',';
    out += format_double(r.mlm_loss);
    out += ',';
    out += format_double(r.cl_loss);
    out += ',';
    out += format_double(r.lr);
    out += '\n';
  }
  return out;
}

void write_history_csv(const std::vector<HistoryRow>& rows, const std::string& path) {
  atomic_write_file(path, history_csv(rows));
}

Stage1Result run_stage1(const Checkpoint& base, const std::vector<std::string>& domain_corpus,
                        int64_t max_new, int64_t domain_vocab_size) {
  Stage1Result result;
  result.checkpoint = base.clone();
  result.checkpoint.stage_label = "stage1";
  if (max_new == 0) return result;

  const Vocab domain_vocab = train_subword_vocab(domain_corpus, domain_vocab_size);
  AugmentResult aug = augment_vocabulary(base.vocab, domain_vocab, max_new);
  const Tensor grown =
      init_new_embeddings(base.weights.token_embedding.value(), aug.records);

  result.checkpoint.vocab = std::move(aug.vocab);
  result.checkpoint.weights.token_embedding = make_parameter(grown, "tok_emb");
  result.checkpoint.weights.config.vocab_size = result.checkpoint.vocab.size();
  // Embedding geometry changed; stale moments must not leak into later stages.
  result.checkpoint.opt_state.reset();
  result.records = std::move(aug.records);
  return result;
}

namespace {

struct BatchLoss {
  Var loss, mlm, cl;
};

BatchLoss batch_losses(const Checkpoint& ck, const std::vector<Encoding>& queries,
                       const std::vector<Encoding>& documents, const StageConfig& config,
                       uint64_t epoch, int64_t step_in_epoch, Rng* dropout_rng) {
  BatchLoss out;
  std::vector<Var> q_emb, d_emb;
  q_emb.reserve(queries.size());
  d_emb.reserve(documents.size());

  if (config.stage == Stage::stage2) {
    MaskingConfig mc = config.masking;
    mc.seed = mix_seed(mc.seed, epoch, static_cast<uint64_t>(step_in_epoch));
    MaskedBatch mb = apply_domain_masking(queries, ck.vocab, mc);
    mb.documents = documents;

    std::vector<Var> q_states;
    q_states.reserve(queries.size());
    for (size_t i = 0; i < queries.size(); ++i) {
      Var states = forward_states(ck.weights, queries[i], &mb.mask_positions[i], dropout_rng);
      q_emb.push_back(mean_pool_graph(states, queries[i]));
      q_states.push_back(std::move(states));
    }

    std::vector<std::vector<int64_t>> doc_masks;
    if (config.joint.mask_documents) {
      MaskingConfig dc = config.masking;
      dc.seed = mix_seed(mc.seed, 0xD0C5);
      doc_masks = apply_domain_masking(documents, ck.vocab, dc).mask_positions;
    }
    for (size_t i = 0; i < documents.size(); ++i) {
      const std::vector<int64_t>* dm = doc_masks.empty() ? nullptr : &doc_masks[i];
      d_emb.push_back(mean_pool_graph(forward_states(ck.weights, documents[i], dm, dropout_rng),
                                      documents[i]));
    }

    out.mlm = mlm_domain_loss(q_states, mb, ck.weights, ck.vocab, config.masking.scope);
    out.cl = contrastive_loss(q_emb, d_emb, config.joint);
    out.loss = joint_loss(out.mlm, out.cl, config.joint.alpha);
  } else {
    for (size_t i = 0; i < queries.size(); ++i)
      q_emb.push_back(mean_pool_graph(forward_states(ck.weights, queries[i], nullptr, dropout_rng),
                                      queries[i]));
    for (size_t i = 0; i < documents.size(); ++i)
      d_emb.push_back(mean_pool_graph(forward_states(ck.weights, documents[i], nullptr, dropout_rng),
                                      documents[i]));
    out.mlm = scalar_constant(0.0);
    out.cl = contrastive_loss(q_emb, d_emb, config.joint);
    out.loss = out.cl;
  }
  return out;
}

}  // namespace

StageResult run_training_stage(const Checkpoint& input, const std::vector<PairRecord>& pairs,
                               const StageConfig& config) {
  config.validate();
  if (config.stage == Stage::stage1)
    throw std::invalid_argument("run_training_stage: stage1 is not a gradient stage");
  if (static_cast<int64_t>(pairs.size()) < config.batch_size)
    throw std::invalid_argument("run_training_stage: need at least batch_size pairs");
  if (input.vocab.size() <= Vocab::kNumSpecials)
    throw std::runtime_error("run_training_stage: checkpoint has no vocabulary");

  StageResult result;
  result.checkpoint = input.clone();
  Checkpoint& ck = result.checkpoint;
  const std::string label = stage_name(config.stage);

  const int64_t n = static_cast<int64_t>(pairs.size());
  const int64_t max_len = ck.weights.config.max_len;
  std::vector<Encoding> q_enc(pairs.size()), d_enc(pairs.size());
  for (size_t i = 0; i < pairs.size(); ++i) {
    q_enc[i] = encode(ck.vocab, pairs[i].query, max_len);
    d_enc[i] = encode(ck.vocab, pairs[i].document, max_len);
  }

  const auto params = ck.weights.parameters();
  TrainState state;
  AdamSettings adam;
  adam.weight_decay = config.weight_decay;

  const int64_t steps_per_epoch = (n + config.batch_size - 1) / config.batch_size;
  const int64_t total_steps = config.epochs * steps_per_epoch;
  const bool use_dropout = ck.weights.config.dropout > 0.0;

  int64_t global_step = 0;
  for (int64_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::vector<int64_t> perm(static_cast<size_t>(n));
    std::iota(perm.begin(), perm.end(), 0);
    Rng shuffle_rng(mix_seed(config.seed, static_cast<uint64_t>(epoch), 0x5117));
    shuffle_rng.shuffle(perm);

    for (int64_t start = 0, step_in_epoch = 0; start < n;
         start += config.batch_size, ++step_in_epoch) {
      const int64_t end = std::min(n, start + config.batch_size);
      if (end - start < 2) {
        ++global_step;  // keeps the schedule aligned with ceil(N/batch)
        continue;
      }
      std::vector<Encoding> bq, bd;
      bq.reserve(static_cast<size_t>(end - start));
      bd.reserve(static_cast<size_t>(end - start));
      for (int64_t i = start; i < end; ++i) {
        bq.push_back(q_enc[static_cast<size_t>(perm[static_cast<size_t>(i)])]);
        bd.push_back(d_enc[static_cast<size_t>(perm[static_cast<size_t>(i)])]);
      }

      const double lr = lr_schedule(global_step, total_steps, config.max_lr, config.warmup_fraction);
      Rng dropout_rng(mix_seed(config.seed, static_cast<uint64_t>(global_step), 0xD209));

      BatchLoss bl;
      try {
        bl = batch_losses(ck, bq, bd, config, static_cast<uint64_t>(epoch), step_in_epoch,
                          use_dropout ? &dropout_rng : nullptr);
      } catch (const std::exception& e) {
        throw std::runtime_error("training aborted at step " + std::to_string(global_step) + ": " +
                                 e.what());
      }
      if (!std::isfinite(bl.loss.value().item()))
        throw std::runtime_error("training aborted at step " + std::to_string(global_step) +
                                 ": non-finite loss");

      for (const auto& [name, var] : params) {
        (void)name;
        Var v = var;
        v.zero_grad();
      }
      backward(bl.loss);
      std::vector<Tensor> grads;
      grads.reserve(params.size());
      for (const auto& [name, var] : params) {
        (void)name;
        grads.push_back(var.grad_or_zero());
      }
      adam_step(params, grads, state, lr, adam);

      result.history.push_back({global_step, label, bl.loss.value().item(),
                                bl.mlm.value().item(), bl.cl.value().item(), lr});
      ++global_step;
    }
  }

  ck.opt_state = std::move(state);
  ck.stage_label = label;
  return result;
}

PipelineResult run_pipeline(const Checkpoint& base, const std::vector<StageConfig>& plan,
                            const PipelineData& data) {
  if (plan.empty()) throw std::invalid_argument("run_pipeline: empty plan");

  PipelineResult result;
  result.checkpoint = base.clone();
  for (size_t pos = 0; pos < plan.size(); ++pos) {
    const StageConfig& sc = plan[pos];
    StageReport report;
    report.stage = stage_name(sc.stage);
    report.position = static_cast<int64_t>(pos);

    if (sc.stage == Stage::stage1) {
      Stage1Result s1 = run_stage1(result.checkpoint, data.domain_corpus, data.max_new,
                                   data.domain_vocab_size);
      result.checkpoint = std::move(s1.checkpoint);
      report.vocab_added = static_cast<int64_t>(s1.records.size());
    } else {
      if (result.checkpoint.vocab.size() <= Vocab::kNumSpecials)
        throw std::runtime_error("run_pipeline: " + report.stage +
                                 " requires a vocabulary; run stage1 or start from a checkpoint "
                                 "with content tokens");
      StageResult sr = run_training_stage(result.checkpoint, data.pairs, sc);
      result.checkpoint = std::move(sr.checkpoint);
      report.steps = static_cast<int64_t>(sr.history.size());
      if (!sr.history.empty()) report.final_loss = sr.history.back().loss;
      report.history = std::move(sr.history);
    }
    result.reports.push_back(std::move(report));
  }
  return result;
}

}  // namespace mosaic
