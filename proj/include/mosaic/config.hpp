#pragma once

#include <cstdint>
#include <string>

#include "mosaic/encoder.hpp"
#include "mosaic/objectives.hpp"

namespace mosaic {

struct PathsConfig {
  std::string pairs;
  std::string base_corpus;
  std::string domain_corpus;
  std::string checkpoint_in;
  std::string checkpoint_out;
  std::string vocab_out;
  std::string domain_out;
  std::string history;
  std::string report;
  std::string queries;
  std::string collection;
  std::string qrels;
  std::string input;
  std::string output;
  std::string out_dir;
  std::string retained;
  std::string filter_report;
  std::string sts;
};

// Everything a command needs, with the cited training defaults baked in
// (alpha 0.3, masking rate 0.15, max_lr 5e-4, weight decay 0.01, warmup
// 0.06, batch 128). Section seeds default to the global seed.
struct RunConfig {
  uint64_t seed = 42;

  EncoderConfig encoder;  // vocab_size is always derived from data, not config
  MaskingConfig masking;
  JointLossConfig joint;

  int64_t epochs = 3;
  int64_t batch_size = 128;
  double max_lr = 5e-4;
  double weight_decay = 0.01;
  double warmup_fraction = 0.06;
  uint64_t stage_seed = 42;

  int64_t domain_vocab_size = 2000;
  int64_t max_new = 1000;
  int64_t tokenizer_vocab_size = 2000;

  int64_t eval_k = 10;
  int64_t min_chars = 8;
  int64_t limit = 0;

  int64_t n_pairs = 200;
  int64_t n_domain_terms = 20;
  int64_t holdout = 0;

  std::string plan = "stage1,stage2,stage3";
  PathsConfig paths;

  // Canonical single-line JSON of the fully-resolved config; re-parsing it
  // yields an equal config.
  std::string echo() const;

  void validate() const;
};

// Strict JSON config: unknown keys and type mismatches are errors naming the
// key. An empty or whitespace-only file means all defaults.
RunConfig parse_config(const std::string& path);
RunConfig parse_config_text(const std::string& text);

}  // namespace mosaic
