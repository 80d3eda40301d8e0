#include "mosaic/commands.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <memory>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "mosaic/config.hpp"
#include "mosaic/data.hpp"
#include "mosaic/eval.hpp"
#include "mosaic/io.hpp"
#include "mosaic/rng.hpp"
#include "mosaic/trainer.hpp"

namespace mosaic {

namespace {

using nlohmann::json;

int log_level() {
  const char* env = std::getenv("MOSAIC_LOG");
  if (!env) return 1;
  const std::string v = env;
  if (v == "quiet") return 0;
  if (v == "debug") return 2;
  return 1;
}

void log_info(const std::string& msg) {
  if (log_level() >= 1) std::cerr << "mosaic: " << msg << "\n";
}

[[noreturn]] void fail(const std::string& msg) { throw std::runtime_error(msg); }

void require_path(const std::string& value, const char* key, bool must_exist) {
  if (value.empty()) fail(std::string("missing required path '") + key + "'");
  if (must_exist && !std::filesystem::exists(value))
    fail(std::string("path '") + key + "' does not exist: " + value);
}

std::vector<std::string> read_lines(const std::string& path) {
  std::vector<std::string> lines;
  std::istringstream in(read_file(path));
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) lines.push_back(line);
  return lines;
}

// Common flags: --config plus ad-hoc overrides wired by each command.
struct CommandContext {
  RunConfig cfg;

  static CommandContext from(CLI::App& app, std::vector<std::string> args,
                             const std::string& config_path) {
    std::reverse(args.begin(), args.end());
    app.parse(args);
    CommandContext ctx;
    ctx.cfg = config_path.empty() ? RunConfig{} : parse_config(config_path);
    return ctx;
  }
};

void echo_config(const RunConfig& cfg) { std::cout << cfg.echo() << "\n"; }

EmbedFn checkpoint_embedder(const Checkpoint& ck) {
  return [&ck](const std::string& text) {
    return embed_sentence(ck.weights, ck.vocab, text, ck.weights.config.max_len).vector;
  };
}

StageConfig stage_config_from(const RunConfig& cfg, Stage stage, uint64_t seed_salt = 0) {
  StageConfig sc;
  sc.stage = stage;
  sc.epochs = cfg.epochs;
  sc.batch_size = cfg.batch_size;
  sc.max_lr = cfg.max_lr;
  sc.weight_decay = cfg.weight_decay;
  sc.warmup_fraction = cfg.warmup_fraction;
  sc.masking = cfg.masking;
  sc.joint = cfg.joint;
  sc.seed = mix_seed(cfg.stage_seed, seed_salt);
  return sc;
}

Checkpoint make_base_checkpoint(const RunConfig& cfg) {
  require_path(cfg.paths.base_corpus, "paths.base_corpus", true);
  const auto corpus = read_lines(cfg.paths.base_corpus);
  Vocab base_vocab = train_subword_vocab(corpus, cfg.tokenizer_vocab_size);
  log_info("trained base vocabulary: " + std::to_string(base_vocab.size()) + " tokens");
  EncoderConfig enc = cfg.encoder;
  return make_initial_checkpoint(enc, std::move(base_vocab));
}

Checkpoint load_or_build_checkpoint(const RunConfig& cfg) {
  if (!cfg.paths.checkpoint_in.empty()) {
    require_path(cfg.paths.checkpoint_in, "paths.checkpoint_in", true);
    return checkpoint_load(cfg.paths.checkpoint_in);
  }
  return make_base_checkpoint(cfg);
}

std::vector<EvalItem> load_eval_items(const std::string& path, const char* key) {
  require_path(path, key, true);
  std::vector<EvalItem> items;
  std::istringstream in(read_file(path));
  std::string line;
  int64_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object() || !j.contains("id") || !j.contains("text") ||
        !j["id"].is_string() || !j["text"].is_string())
      fail(std::string(key) + ": expected {\"id\":...,\"text\":...} at line " +
           std::to_string(line_no));
    items.push_back({j["id"].get<std::string>(), j["text"].get<std::string>()});
  }
  if (items.empty()) fail(std::string(key) + ": no items in " + path);
  return items;
}

std::string eval_id(const char* prefix, size_t i) {
  char buf[24];
  std::snprintf(buf, sizeof(buf), "%s%05zu", prefix, i);
  return buf;
}

// ---------------------------------------------------------------- commands

int cmd_gen_synth(std::vector<std::string> args) {
  CLI::App app{"generate a deterministic synthetic pair corpus"};
  std::string config_path, out_dir;
  int64_t seed = -1, n_pairs = -1, n_domain_terms = -1, holdout = -1;
  app.add_option("--config", config_path);
  app.add_option("--out-dir", out_dir);
  app.add_option("--seed", seed);
  app.add_option("--n-pairs", n_pairs);
  app.add_option("--n-domain-terms", n_domain_terms);
  app.add_option("--holdout", holdout);
  auto ctx = CommandContext::from(app, std::move(args), config_path);
  RunConfig& cfg = ctx.cfg;
  if (seed >= 0) cfg.seed = static_cast<uint64_t>(seed);
  if (n_pairs >= 0) cfg.n_pairs = n_pairs;
  if (n_domain_terms >= 0) cfg.n_domain_terms = n_domain_terms;
  if (holdout >= 0) cfg.holdout = holdout;
  if (!out_dir.empty()) cfg.paths.out_dir = out_dir;
  cfg.validate();
  require_path(cfg.paths.out_dir, "paths.out_dir", false);
  echo_config(cfg);

  std::filesystem::create_directories(cfg.paths.out_dir);
  const std::filesystem::path dir(cfg.paths.out_dir);
  SyntheticCorpus corpus = gen_synthetic_corpus(cfg.seed, cfg.n_pairs, cfg.n_domain_terms);

  const int64_t n_train = cfg.n_pairs - cfg.holdout;
  std::vector<PairRecord> train(corpus.pairs.begin(), corpus.pairs.begin() + n_train);
  std::vector<PairRecord> held(corpus.pairs.begin() + n_train, corpus.pairs.end());
  save_pairs(train, (dir / "pairs.jsonl").string());
  if (!held.empty()) save_pairs(held, (dir / "holdout_pairs.jsonl").string());

  std::string terms;
  for (const auto& t : corpus.domain_terms) terms += t + "\n";
  atomic_write_file((dir / "domain_terms.txt").string(), terms);

  std::string base;
  for (const auto& line : corpus.base_corpus) base += line + "\n";
  atomic_write_file((dir / "base_corpus.txt").string(), base);

  // Retrieval view: held-out queries (all queries when nothing is held out)
  // against the full document collection, own document judged relevant.
  std::string queries_body, collection_body, qrels_body;
  for (size_t i = 0; i < corpus.pairs.size(); ++i) {
    json dj;
    dj["id"] = eval_id("d", i);
    dj["text"] = corpus.pairs[i].document;
    collection_body += dj.dump() + "\n";
  }
  const size_t q_begin = held.empty() ? 0 : static_cast<size_t>(n_train);
  for (size_t i = q_begin; i < corpus.pairs.size(); ++i) {
    json qj;
    qj["id"] = eval_id("q", i);
    qj["text"] = corpus.pairs[i].query;
    queries_body += qj.dump() + "\n";
    qrels_body += eval_id("q", i) + " " + eval_id("d", i) + " 1\n";
  }
  atomic_write_file((dir / "queries.jsonl").string(), queries_body);
  atomic_write_file((dir / "collection.jsonl").string(), collection_body);
  atomic_write_file((dir / "qrels.txt").string(), qrels_body);
  log_info("wrote synthetic corpus to " + cfg.paths.out_dir);
  return 0;
}

int cmd_train_tokenizer(std::vector<std::string> args) {
  CLI::App app{"train a subword vocabulary"};
  std::string config_path, corpus, vocab_out, domain_out;
  int64_t vocab_size = -1;
  app.add_option("--config", config_path);
  app.add_option("--corpus", corpus);
  app.add_option("--vocab-out", vocab_out);
  app.add_option("--domain-out", domain_out);
  app.add_option("--vocab-size", vocab_size);
  auto ctx = CommandContext::from(app, std::move(args), config_path);
  RunConfig& cfg = ctx.cfg;
  if (!corpus.empty()) cfg.paths.input = corpus;
  if (!vocab_out.empty()) cfg.paths.vocab_out = vocab_out;
  if (!domain_out.empty()) cfg.paths.domain_out = domain_out;
  if (vocab_size > 0) cfg.tokenizer_vocab_size = vocab_size;
  cfg.validate();
  require_path(cfg.paths.input, "paths.input", true);
  require_path(cfg.paths.vocab_out, "paths.vocab_out", false);
  if (cfg.paths.domain_out.empty()) cfg.paths.domain_out = cfg.paths.vocab_out + ".domain";
  echo_config(cfg);

  Vocab vocab = train_subword_vocab(read_lines(cfg.paths.input), cfg.tokenizer_vocab_size);
  save_vocab(vocab, cfg.paths.vocab_out, cfg.paths.domain_out);
  log_info("vocabulary of " + std::to_string(vocab.size()) + " tokens -> " + cfg.paths.vocab_out);
  return 0;
}

int cmd_stage1(std::vector<std::string> args) {
  CLI::App app{"vocabulary augmentation"};
  std::string config_path;
  app.add_option("--config", config_path);
  auto ctx = CommandContext::from(app, std::move(args), config_path);
  RunConfig& cfg = ctx.cfg;
  cfg.validate();
  require_path(cfg.paths.domain_corpus, "paths.domain_corpus", true);
  require_path(cfg.paths.checkpoint_out, "paths.checkpoint_out", false);
  echo_config(cfg);

  Checkpoint base = load_or_build_checkpoint(cfg);
  Stage1Result result =
      run_stage1(base, read_lines(cfg.paths.domain_corpus), cfg.max_new, cfg.domain_vocab_size);
  checkpoint_save(result.checkpoint, cfg.paths.checkpoint_out);
  if (!cfg.paths.vocab_out.empty()) {
    const std::string domain_out =
        cfg.paths.domain_out.empty() ? cfg.paths.vocab_out + ".domain" : cfg.paths.domain_out;
    save_vocab(result.checkpoint.vocab, cfg.paths.vocab_out, domain_out);
  }
  log_info("added " + std::to_string(result.records.size()) + " domain tokens");
  return 0;
}

int run_training_command(std::vector<std::string> args, Stage stage) {
  CLI::App app{"gradient training stage"};
  std::string config_path;
  app.add_option("--config", config_path);
  auto ctx = CommandContext::from(app, std::move(args), config_path);
  RunConfig& cfg = ctx.cfg;
  cfg.validate();
  require_path(cfg.paths.pairs, "paths.pairs", true);
  require_path(cfg.paths.checkpoint_in, "paths.checkpoint_in", true);
  require_path(cfg.paths.checkpoint_out, "paths.checkpoint_out", false);
  echo_config(cfg);

  Checkpoint ck = checkpoint_load(cfg.paths.checkpoint_in);
  const auto pairs = load_pairs(cfg.paths.pairs, cfg.limit, cfg.min_chars);
  StageResult result = run_training_stage(ck, pairs, stage_config_from(cfg, stage));
  checkpoint_save(result.checkpoint, cfg.paths.checkpoint_out);
  if (!cfg.paths.history.empty()) write_history_csv(result.history, cfg.paths.history);
  log_info(stage_name(stage) + ": " + std::to_string(result.history.size()) + " steps, final loss " +
           (result.history.empty() ? "n/a" : format_double(result.history.back().loss)));
  return 0;
}

std::vector<StageConfig> build_plan(const RunConfig& cfg) {
  std::vector<StageConfig> plan;
  std::istringstream in(cfg.plan);
  std::string item;
  uint64_t pos = 0;
  while (std::getline(in, item, ',')) {
    if (item.empty()) continue;
    plan.push_back(stage_config_from(cfg, parse_stage(item), pos++));
  }
  if (plan.empty()) fail("plan: no stages in '" + cfg.plan + "'");
  return plan;
}

std::string pipeline_report_csv(const std::vector<StageReport>& reports) {
  std::string out = "position,stage,steps,vocab_added,final_loss\n";
  for (const auto& r : reports) {
    out += std::to_string(r.position) + ',' + r.stage + ',' + std::to_string(r.steps) + ',' +
           std::to_string(r.vocab_added) + ',' + format_double(r.final_loss) + '\n';
  }
  return out;
}

int cmd_pipeline(std::vector<std::string> args) {
  CLI::App app{"run a stage plan with checkpoint hand-off"};
  std::string config_path, plan_override, out_dir;
  app.add_option("--config", config_path);
  app.add_option("--plan", plan_override);
  app.add_option("--out-dir", out_dir);
  auto ctx = CommandContext::from(app, std::move(args), config_path);
  RunConfig& cfg = ctx.cfg;
  if (!plan_override.empty()) cfg.plan = plan_override;
  if (!out_dir.empty()) cfg.paths.out_dir = out_dir;
  cfg.validate();
  require_path(cfg.paths.out_dir, "paths.out_dir", false);
  echo_config(cfg);

  const std::vector<StageConfig> plan = build_plan(cfg);
  const bool needs_pairs = std::any_of(plan.begin(), plan.end(), [](const StageConfig& sc) {
    return sc.stage != Stage::stage1;
  });
  const bool needs_stage1 = std::any_of(plan.begin(), plan.end(), [](const StageConfig& sc) {
    return sc.stage == Stage::stage1;
  });

  PipelineData data;
  data.domain_vocab_size = cfg.domain_vocab_size;
  data.max_new = cfg.max_new;
  if (needs_pairs || needs_stage1) {
    require_path(cfg.paths.pairs, "paths.pairs", true);
    data.pairs = load_pairs(cfg.paths.pairs, cfg.limit, cfg.min_chars);
  }
  if (needs_stage1) {
    if (!cfg.paths.domain_corpus.empty()) {
      data.domain_corpus = read_lines(cfg.paths.domain_corpus);
    } else {
      // The training pairs are the in-domain text; reuse them.
      for (const auto& p : data.pairs) {
        data.domain_corpus.push_back(p.query);
        data.domain_corpus.push_back(p.document);
      }
    }
  }

  std::filesystem::create_directories(cfg.paths.out_dir);
  const std::filesystem::path dir(cfg.paths.out_dir);

  Checkpoint base = load_or_build_checkpoint(cfg);
  PipelineResult result = run_pipeline(base, plan, data);

  checkpoint_save(result.checkpoint, (dir / "final.ckpt").string());
  for (const auto& report : result.reports) {
    if (report.stage == "stage1") continue;
    write_history_csv(report.history,
                      (dir / ("history_" + std::to_string(report.position) + "_" + report.stage +
                              ".csv"))
                          .string());
  }
  atomic_write_file((dir / "pipeline_report.csv").string(), pipeline_report_csv(result.reports));
  log_info("pipeline complete -> " + (dir / "final.ckpt").string());
  return 0;
}

int cmd_filter_pairs(std::vector<std::string> args) {
  CLI::App app{"consistency-based pair filtering"};
  std::string config_path;
  int64_t k = -1;
  app.add_option("--config", config_path);
  app.add_option("--k", k);
  auto ctx = CommandContext::from(app, std::move(args), config_path);
  RunConfig& cfg = ctx.cfg;
  if (k > 0) cfg.eval_k = k;
  cfg.validate();
  require_path(cfg.paths.pairs, "paths.pairs", true);
  require_path(cfg.paths.checkpoint_in, "paths.checkpoint_in", true);
  require_path(cfg.paths.retained, "paths.retained", false);
  require_path(cfg.paths.filter_report, "paths.filter_report", false);
  echo_config(cfg);

  Checkpoint ck = checkpoint_load(cfg.paths.checkpoint_in);
  const auto pairs = load_pairs(cfg.paths.pairs, cfg.limit, cfg.min_chars);
  FilterResult result = consistency_filter(pairs, checkpoint_embedder(ck), cfg.eval_k);
  save_pairs(result.retained, cfg.paths.retained);
  save_filter_report(result.report, cfg.paths.filter_report);
  log_info("retained " + std::to_string(result.report.retained) + " of " +
           std::to_string(pairs.size()) + " pairs (k=" + std::to_string(result.report.k) + ")");
  return 0;
}

int cmd_embed(std::vector<std::string> args) {
  CLI::App app{"embed text lines"};
  std::string config_path;
  app.add_option("--config", config_path);
  auto ctx = CommandContext::from(app, std::move(args), config_path);
  RunConfig& cfg = ctx.cfg;
  cfg.validate();
  require_path(cfg.paths.checkpoint_in, "paths.checkpoint_in", true);
  require_path(cfg.paths.input, "paths.input", true);
  require_path(cfg.paths.output, "paths.output", false);
  echo_config(cfg);

  Checkpoint ck = checkpoint_load(cfg.paths.checkpoint_in);
  std::string body;
  for (const auto& line : read_lines(cfg.paths.input)) {
    const auto emb = embed_sentence(ck.weights, ck.vocab, line, ck.weights.config.max_len);
    for (size_t i = 0; i < emb.vector.size(); ++i) {
      if (i) body += ',';
      body += format_double(emb.vector[i]);
    }
    body += '\n';
  }
  atomic_write_file(cfg.paths.output, body);
  return 0;
}

EmbedFn pick_embedder(const std::string& embedder, const RunConfig& cfg,
                      std::shared_ptr<Checkpoint>& ck_holder,
                      const std::vector<EvalItem>& corpus_hint) {
  if (embedder == "bow") {
    std::vector<std::string> texts;
    for (const auto& item : corpus_hint) texts.push_back(item.text);
    auto bow = std::make_shared<BowEmbedder>(texts);
    return [bow](const std::string& text) { return (*bow)(text); };
  }
  if (embedder == "checkpoint") {
    require_path(cfg.paths.checkpoint_in, "paths.checkpoint_in", true);
    ck_holder = std::make_shared<Checkpoint>(checkpoint_load(cfg.paths.checkpoint_in));
    auto ck = ck_holder;
    return [ck](const std::string& text) {
      return embed_sentence(ck->weights, ck->vocab, text, ck->weights.config.max_len).vector;
    };
  }
  fail("--embedder must be 'checkpoint' or 'bow', got '" + embedder + "'");
}

int cmd_eval_retrieval(std::vector<std::string> args) {
  CLI::App app{"retrieval evaluation"};
  std::string config_path, embedder = "checkpoint";
  app.add_option("--config", config_path);
  app.add_option("--embedder", embedder);
  auto ctx = CommandContext::from(app, std::move(args), config_path);
  RunConfig& cfg = ctx.cfg;
  cfg.validate();
  const auto queries = load_eval_items(cfg.paths.queries, "paths.queries");
  const auto collection = load_eval_items(cfg.paths.collection, "paths.collection");
  require_path(cfg.paths.qrels, "paths.qrels", true);
  require_path(cfg.paths.report, "paths.report", false);
  echo_config(cfg);

  std::vector<EvalItem> hint = collection;
  hint.insert(hint.end(), queries.begin(), queries.end());
  std::shared_ptr<Checkpoint> ck;
  const EmbedFn embed = pick_embedder(embedder, cfg, ck, hint);

  const RelevanceJudgments judgments = load_qrels(cfg.paths.qrels);
  MetricReport report = evaluate_retrieval(embed, queries, collection, judgments, cfg.eval_k);
  write_report_csv(report, cfg.paths.report);

  json summary;
  summary["mean_ndcg"] = report.mean;
  summary["queries"] = report.per_query.size();
  summary["zero_count"] = report.zero_count;
  std::cout << summary.dump() << "\n";
  return 0;
}

int cmd_eval_sts(std::vector<std::string> args) {
  CLI::App app{"semantic textual similarity evaluation"};
  std::string config_path, embedder = "checkpoint";
  app.add_option("--config", config_path);
  app.add_option("--embedder", embedder);
  auto ctx = CommandContext::from(app, std::move(args), config_path);
  RunConfig& cfg = ctx.cfg;
  cfg.validate();
  require_path(cfg.paths.sts, "paths.sts", true);
  require_path(cfg.paths.report, "paths.report", false);
  echo_config(cfg);

  struct StsRecord {
    std::string a, b;
    double gold;
  };
  std::vector<StsRecord> records;
  {
    std::istringstream in(read_file(cfg.paths.sts));
    std::string line;
    int64_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      json j = json::parse(line, nullptr, false);
      if (j.is_discarded() || !j.is_object() || !j.contains("text_a") || !j.contains("text_b") ||
          !j.contains("score") || !j["text_a"].is_string() || !j["text_b"].is_string() ||
          !j["score"].is_number())
        fail("paths.sts: expected {\"text_a\",\"text_b\",\"score\"} at line " +
             std::to_string(line_no));
      records.push_back({j["text_a"].get<std::string>(), j["text_b"].get<std::string>(),
                         j["score"].get<double>()});
    }
  }
  if (records.size() < 2) fail("paths.sts: need at least 2 records");

  std::vector<EvalItem> hint;
  for (size_t i = 0; i < records.size(); ++i) {
    hint.push_back({eval_id("a", i), records[i].a});
    hint.push_back({eval_id("b", i), records[i].b});
  }
  std::shared_ptr<Checkpoint> ck;
  const EmbedFn embed = pick_embedder(embedder, cfg, ck, hint);

  std::vector<double> sims, gold;
  for (const auto& r : records) {
    const auto ea = embed(r.a);
    const auto eb = embed(r.b);
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (size_t i = 0; i < ea.size(); ++i) {
      dot += ea[i] * eb[i];
      na += ea[i] * ea[i];
      nb += eb[i] * eb[i];
    }
    sims.push_back(dot / std::sqrt(na * nb));
    gold.push_back(r.gold);
  }
  const double rho = spearman(sims, gold);

  json out;
  out["spearman"] = rho;
  out["n"] = records.size();
  atomic_write_file(cfg.paths.report, out.dump() + "\n");
  std::cout << out.dump() << "\n";
  return 0;
}

void print_usage(std::ostream& os) {
  os << "usage: mosaic <command> [--config FILE] [options]\n"
     << "commands:\n"
     << "  gen-synth        generate a deterministic synthetic pair corpus\n"
     << "  train-tokenizer  train a subword vocabulary from a text file\n"
     << "  stage1           vocabulary augmentation (no gradient steps)\n"
     << "  stage2           joint masked + contrastive training\n"
     << "  stage3           contrastive-only training\n"
     << "  pipeline         run a stage plan, e.g. --plan stage1,stage2,stage3\n"
     << "  filter-pairs     consistency-based pair filtering\n"
     << "  embed            embed text lines with a checkpoint\n"
     << "  eval-retrieval   NDCG@k retrieval evaluation\n"
     << "  eval-sts         Spearman STS evaluation\n";
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
  if (args.size() < 2) {
    print_usage(std::cerr);
    return 2;
  }
  const std::string command = args[1];
  std::vector<std::string> rest(args.begin() + 2, args.end());

  try {
    if (command == "gen-synth") return cmd_gen_synth(std::move(rest));
    if (command == "train-tokenizer") return cmd_train_tokenizer(std::move(rest));
    if (command == "stage1") return cmd_stage1(std::move(rest));
    if (command == "stage2") return run_training_command(std::move(rest), Stage::stage2);
    if (command == "stage3") return run_training_command(std::move(rest), Stage::stage3);
    if (command == "pipeline") return cmd_pipeline(std::move(rest));
    if (command == "filter-pairs") return cmd_filter_pairs(std::move(rest));
    if (command == "embed") return cmd_embed(std::move(rest));
    if (command == "eval-retrieval") return cmd_eval_retrieval(std::move(rest));
    if (command == "eval-sts") return cmd_eval_sts(std::move(rest));
    if (command == "help" || command == "--help" || command == "-h") {
      print_usage(std::cout);
      return 0;
    }
  } catch (const CLI::CallForHelp&) {
    print_usage(std::cout);
    return 0;
  } catch (const std::exception& e) {
    json err;
    err["command"] = command;
    err["error"] = e.what();
    std::cerr << err.dump() << "\n";
    return 1;
  }

  print_usage(std::cerr);
  return 2;
}

}  // namespace mosaic
