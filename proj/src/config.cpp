#include "mosaic/config.hpp"

#include <set>
#include <stdexcept>

#include <json.hpp>

#include "mosaic/io.hpp"

namespace mosaic {

namespace {

using nlohmann::json;

[[noreturn]] void key_error(const std::string& key, const std::string& what) {
  throw std::runtime_error("config key '" + key + "': " + what);
}

class Section {
 public:
  Section(const json& j, std::string prefix) : j_(j), prefix_(std::move(prefix)) {
    if (!j_.is_object()) key_error(prefix_.empty() ? "<root>" : prefix_, "expected an object");
  }

  ~Section() = default;

  void get_u64(const char* key, uint64_t& out) {
    if (auto* v = find(key)) {
      if (!v->is_number_unsigned() && !v->is_number_integer()) key_error(full(key), "expected an integer");
      const int64_t raw = v->get<int64_t>();
      if (raw < 0) key_error(full(key), "expected a non-negative integer");
      out = static_cast<uint64_t>(raw);
    }
  }

  void get_i64(const char* key, int64_t& out) {
    if (auto* v = find(key)) {
      if (!v->is_number_integer() && !v->is_number_unsigned()) key_error(full(key), "expected an integer");
      out = v->get<int64_t>();
    }
  }

  void get_double(const char* key, double& out) {
    if (auto* v = find(key)) {
      if (!v->is_number()) key_error(full(key), "expected a number");
      out = v->get<double>();
    }
  }

  void get_string(const char* key, std::string& out) {
    if (auto* v = find(key)) {
      if (!v->is_string()) key_error(full(key), "expected a string");
      out = v->get<std::string>();
    }
  }

  void get_bool(const char* key, bool& out) {
    if (auto* v = find(key)) {
      if (!v->is_boolean()) key_error(full(key), "expected a boolean");
      out = v->get<bool>();
    }
  }

  bool has(const char* key) const { return j_.contains(key); }

  const json* sub(const char* key) {
    if (auto* v = find(key)) return v;
    return nullptr;
  }

  // Call after all gets: anything not consumed is unknown.
  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!consumed_.count(it.key())) key_error(full(it.key().c_str()), "unknown key");
  }

 private:
  const json* find(const char* key) {
    auto it = j_.find(key);
    if (it == j_.end()) return nullptr;
    consumed_.insert(key);
    return &*it;
  }
  std::string full(const char* key) const { return prefix_.empty() ? key : prefix_ + "." + key; }

  const json& j_;
  std::string prefix_;
  std::set<std::string> consumed_;
};

MaskScope parse_scope(const std::string& s) {
  if (s == "domain_only") return MaskScope::domain_only;
  if (s == "all_tokens") return MaskScope::all_tokens;
  key_error("masking.scope", "expected 'domain_only' or 'all_tokens', got '" + s + "'");
}

Scoring parse_scoring(const std::string& s) {
  if (s == "dot") return Scoring::dot;
  if (s == "cosine_over_tau") return Scoring::cosine_over_tau;
  key_error("joint.scoring", "expected 'dot' or 'cosine_over_tau', got '" + s + "'");
}

const char* scope_name(MaskScope s) {
  return s == MaskScope::domain_only ? "domain_only" : "all_tokens";
}

const char* scoring_name(Scoring s) { return s == Scoring::dot ? "dot" : "cosine_over_tau"; }

}  // namespace

void RunConfig::validate() const {
  if (encoder.layers < 0) key_error("encoder.layers", "must be >= 0");
  if (encoder.heads < 1) key_error("encoder.heads", "must be >= 1");
  if (encoder.model_dim < 1) key_error("encoder.model_dim", "must be >= 1");
  if (encoder.model_dim % encoder.heads != 0)
    key_error("encoder.model_dim", "must be divisible by encoder.heads");
  if (encoder.ff_dim < 1) key_error("encoder.ff_dim", "must be >= 1");
  if (encoder.max_len < 2) key_error("encoder.max_len", "must be >= 2");
  if (encoder.dropout < 0.0 || encoder.dropout >= 1.0) key_error("encoder.dropout", "must be in [0,1)");
  if (masking.rate < 0.0 || masking.rate > 1.0) key_error("masking.rate", "must be in [0,1]");
  if (joint.alpha < 0.0) key_error("joint.alpha", "must be non-negative");
  if (joint.tau <= 0.0) key_error("joint.tau", "must be positive");
  if (epochs < 1) key_error("stage.epochs", "must be >= 1");
  if (batch_size < 2) key_error("stage.batch_size", "must be >= 2");
  if (max_lr < 0.0) key_error("stage.max_lr", "must be non-negative");
  if (weight_decay < 0.0) key_error("stage.weight_decay", "must be non-negative");
  if (warmup_fraction < 0.0 || warmup_fraction >= 1.0)
    key_error("stage.warmup_fraction", "must be in [0,1)");
  if (domain_vocab_size <= Vocab::kNumSpecials) key_error("stage1.domain_vocab_size", "too small");
  if (max_new < 0) key_error("stage1.max_new", "must be non-negative");
  if (tokenizer_vocab_size <= Vocab::kNumSpecials) key_error("tokenizer.vocab_size", "too small");
  if (eval_k < 1) key_error("eval.k", "must be >= 1");
  if (min_chars < 0) key_error("data.min_chars", "must be non-negative");
  if (limit < 0) key_error("data.limit", "must be non-negative");
  if (n_pairs < 2) key_error("gen.n_pairs", "must be >= 2");
  if (n_domain_terms < 1) key_error("gen.n_domain_terms", "must be >= 1");
  if (holdout < 0 || holdout >= n_pairs) key_error("gen.holdout", "must be in [0, n_pairs)");
  for (const auto& part : {plan}) {
    (void)part;  // plan tokens are validated where the plan is built
  }
}

RunConfig parse_config_text(const std::string& text) {
  std::string trimmed = text;
  const size_t b = trimmed.find_first_not_of(" \t\r\n");
  trimmed = b == std::string::npos ? "" : trimmed.substr(b);

  json root = trimmed.empty() ? json::object() : json::parse(trimmed, nullptr, false);
  if (root.is_discarded()) throw std::runtime_error("config: invalid JSON");

  RunConfig cfg;
  Section top(root, "");
  top.get_u64("seed", cfg.seed);
  // Section seeds follow the global seed unless set explicitly.
  cfg.encoder.seed = cfg.seed;
  cfg.masking.seed = cfg.seed;
  cfg.stage_seed = cfg.seed;

  if (const json* enc = top.sub("encoder")) {
    Section s(*enc, "encoder");
    s.get_i64("layers", cfg.encoder.layers);
    s.get_i64("heads", cfg.encoder.heads);
    s.get_i64("model_dim", cfg.encoder.model_dim);
    s.get_i64("ff_dim", cfg.encoder.ff_dim);
    s.get_i64("max_len", cfg.encoder.max_len);
    s.get_double("dropout", cfg.encoder.dropout);
    s.get_u64("seed", cfg.encoder.seed);
    s.finish();
  }
  if (const json* m = top.sub("masking")) {
    Section s(*m, "masking");
    s.get_double("rate", cfg.masking.rate);
    std::string scope = scope_name(cfg.masking.scope);
    s.get_string("scope", scope);
    cfg.masking.scope = parse_scope(scope);
    s.get_u64("seed", cfg.masking.seed);
    s.finish();
  }
  if (const json* jt = top.sub("joint")) {
    Section s(*jt, "joint");
    s.get_double("alpha", cfg.joint.alpha);
    std::string scoring = scoring_name(cfg.joint.scoring);
    s.get_string("scoring", scoring);
    cfg.joint.scoring = parse_scoring(scoring);
    s.get_double("tau", cfg.joint.tau);
    s.get_bool("mask_documents", cfg.joint.mask_documents);
    s.finish();
  }
  if (const json* st = top.sub("stage")) {
    Section s(*st, "stage");
    s.get_i64("epochs", cfg.epochs);
    s.get_i64("batch_size", cfg.batch_size);
    s.get_double("max_lr", cfg.max_lr);
    s.get_double("weight_decay", cfg.weight_decay);
    s.get_double("warmup_fraction", cfg.warmup_fraction);
    s.get_u64("seed", cfg.stage_seed);
    s.finish();
  }
  if (const json* s1 = top.sub("stage1")) {
    Section s(*s1, "stage1");
    s.get_i64("domain_vocab_size", cfg.domain_vocab_size);
    s.get_i64("max_new", cfg.max_new);
    s.finish();
  }
  if (const json* tk = top.sub("tokenizer")) {
    Section s(*tk, "tokenizer");
    s.get_i64("vocab_size", cfg.tokenizer_vocab_size);
    s.finish();
  }
  if (const json* ev = top.sub("eval")) {
    Section s(*ev, "eval");
    s.get_i64("k", cfg.eval_k);
    s.finish();
  }
  if (const json* da = top.sub("data")) {
    Section s(*da, "data");
    s.get_i64("min_chars", cfg.min_chars);
    s.get_i64("limit", cfg.limit);
    s.finish();
  }
  if (const json* ge = top.sub("gen")) {
    Section s(*ge, "gen");
    s.get_i64("n_pairs", cfg.n_pairs);
    s.get_i64("n_domain_terms", cfg.n_domain_terms);
    s.get_i64("holdout", cfg.holdout);
    s.finish();
  }
  top.get_string("plan", cfg.plan);
  if (const json* pa = top.sub("paths")) {
    Section s(*pa, "paths");
    s.get_string("pairs", cfg.paths.pairs);
    s.get_string("base_corpus", cfg.paths.base_corpus);
    s.get_string("domain_corpus", cfg.paths.domain_corpus);
    s.get_string("checkpoint_in", cfg.paths.checkpoint_in);
    s.get_string("checkpoint_out", cfg.paths.checkpoint_out);
    s.get_string("vocab_out", cfg.paths.vocab_out);
    s.get_string("domain_out", cfg.paths.domain_out);
    s.get_string("history", cfg.paths.history);
    s.get_string("report", cfg.paths.report);
    s.get_string("queries", cfg.paths.queries);
    s.get_string("collection", cfg.paths.collection);
    s.get_string("qrels", cfg.paths.qrels);
    s.get_string("input", cfg.paths.input);
    s.get_string("output", cfg.paths.output);
    s.get_string("out_dir", cfg.paths.out_dir);
    s.get_string("retained", cfg.paths.retained);
    s.get_string("filter_report", cfg.paths.filter_report);
    s.get_string("sts", cfg.paths.sts);
    s.finish();
  }
  top.finish();

  cfg.validate();
  return cfg;
}

RunConfig parse_config(const std::string& path) { return parse_config_text(read_file(path)); }

std::string RunConfig::echo() const {
  json j;
  j["seed"] = seed;
  j["encoder"] = {{"layers", encoder.layers},   {"heads", encoder.heads},
                  {"model_dim", encoder.model_dim}, {"ff_dim", encoder.ff_dim},
                  {"max_len", encoder.max_len}, {"dropout", encoder.dropout},
                  {"seed", encoder.seed}};
  j["masking"] = {{"rate", masking.rate}, {"scope", scope_name(masking.scope)}, {"seed", masking.seed}};
  j["joint"] = {{"alpha", joint.alpha},
                {"scoring", scoring_name(joint.scoring)},
                {"tau", joint.tau},
                {"mask_documents", joint.mask_documents}};
  j["stage"] = {{"epochs", epochs},
                {"batch_size", batch_size},
                {"max_lr", max_lr},
                {"weight_decay", weight_decay},
                {"warmup_fraction", warmup_fraction},
                {"seed", stage_seed}};
  j["stage1"] = {{"domain_vocab_size", domain_vocab_size}, {"max_new", max_new}};
  j["tokenizer"] = {{"vocab_size", tokenizer_vocab_size}};
  j["eval"] = {{"k", eval_k}};
  j["data"] = {{"min_chars", min_chars}, {"limit", limit}};
  j["gen"] = {{"n_pairs", n_pairs}, {"n_domain_terms", n_domain_terms}, {"holdout", holdout}};
  j["plan"] = plan;
  j["paths"] = {{"pairs", paths.pairs},
                {"base_corpus", paths.base_corpus},
                {"domain_corpus", paths.domain_corpus},
                {"checkpoint_in", paths.checkpoint_in},
                {"checkpoint_out", paths.checkpoint_out},
                {"vocab_out", paths.vocab_out},
                {"domain_out", paths.domain_out},
                {"history", paths.history},
                {"report", paths.report},
                {"queries", paths.queries},
                {"collection", paths.collection},
                {"qrels", paths.qrels},
                {"input", paths.input},
                {"output", paths.output},
                {"out_dir", paths.out_dir},
                {"retained", paths.retained},
                {"filter_report", paths.filter_report},
                {"sts", paths.sts}};
  return j.dump();
}

}  // namespace mosaic
