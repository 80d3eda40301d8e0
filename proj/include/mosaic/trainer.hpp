#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mosaic/data.hpp"
#include "mosaic/encoder.hpp"
#include "mosaic/objectives.hpp"
#include "mosaic/tokenizer.hpp"

namespace mosaic {

enum class Stage { stage1, stage2, stage3 };

std::string stage_name(Stage stage);
Stage parse_stage(const std::string& name);

struct StageConfig {
  Stage stage = Stage::stage2;
  int64_t epochs = 3;
  int64_t batch_size = 128;
  double max_lr = 5e-4;
  double weight_decay = 0.01;
  double warmup_fraction = 0.06;
  MaskingConfig masking;
  JointLossConfig joint;
  uint64_t seed = 0;

  void validate() const;
};

// Adam moment accumulators keyed by parameter name.
struct TrainState {
  int64_t step = 0;
  std::map<std::string, Tensor> m;
  std::map<std::string, Tensor> v;
};

struct Checkpoint {
  static constexpr uint32_t kFormatVersion = 1;

  Vocab vocab;
  EncoderWeights weights;
  std::optional<TrainState> opt_state;
  std::string stage_label = "init";

  Checkpoint clone() const;
};

Checkpoint make_initial_checkpoint(EncoderConfig config, Vocab vocab);

struct AdamSettings {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

// One Adam update with bias correction; weight decay is decoupled (applied
// to the parameter directly, never mixed into the moments). A non-finite
// gradient is an error naming the parameter.
void adam_step(const std::vector<std::pair<std::string, Var>>& params,
               const std::vector<Tensor>& grads, TrainState& state, double lr,
               const AdamSettings& settings);

// Linear ramp 0 -> max_lr over ceil(warmup_fraction * total_steps) steps,
// then linear decay to 0 at total_steps.
double lr_schedule(int64_t step, int64_t total_steps, double max_lr, double warmup_fraction);

struct HistoryRow {
  int64_t step = 0;
  std::string stage;
  double loss = 0.0;
  double mlm_loss = 0.0;
  double cl_loss = 0.0;
  double lr = 0.0;
};

std::string history_csv(const std::vector<HistoryRow>& rows);
void write_history_csv(const std::vector<HistoryRow>& rows, const std::string& path);

struct Stage1Result {
  Checkpoint checkpoint;
  std::vector<NewTokenRecord> records;
};

// Vocabulary augmentation: trains a domain tokenizer, appends missing domain
// tokens, and mean-initializes their embedding rows. No gradient steps;
// encoder weights and existing embedding rows are untouched.
Stage1Result run_stage1(const Checkpoint& base, const std::vector<std::string>& domain_corpus,
                        int64_t max_new, int64_t domain_vocab_size = 2000);

struct StageResult {
  Checkpoint checkpoint;
  std::vector<HistoryRow> history;
};

// Runs stage2 (joint masked + contrastive) or stage3 (contrastive only over
// clean inputs). Epoch shuffling, masking and any dropout all derive from
// config.seed, so equal inputs give bit-identical results. A trailing chunk
// of a single pair cannot form in-batch negatives and is skipped.
StageResult run_training_stage(const Checkpoint& input, const std::vector<PairRecord>& pairs,
                               const StageConfig& config);

struct PipelineData {
  std::vector<PairRecord> pairs;
  std::vector<std::string> domain_corpus;
  int64_t domain_vocab_size = 2000;
  int64_t max_new = 1000;
};

struct StageReport {
  std::string stage;
  int64_t position = 0;
  int64_t steps = 0;
  int64_t vocab_added = 0;
  double final_loss = 0.0;
  std::vector<HistoryRow> history;
};

struct PipelineResult {
  Checkpoint checkpoint;
  std::vector<StageReport> reports;
};

// Executes the stages in the given order with checkpoint hand-off. The
// canonical plan is stage1,stage2,stage3; the swapped order is accepted.
// Training stages require a vocabulary with content tokens.
PipelineResult run_pipeline(const Checkpoint& base, const std::vector<StageConfig>& plan,
                            const PipelineData& data);

// Binary format: magic "MOSC", format version, then length-prefixed named
// sections (config text, stage label, vocab, domain ids, weight arrays,
// optional optimizer state). Round-trips bit-exactly; foreign or truncated
// files are rejected.
void checkpoint_save(const Checkpoint& checkpoint, const std::string& path);
Checkpoint checkpoint_load(const std::string& path);

}  // namespace mosaic
