#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

namespace mosaic {

struct PairRecord {
  std::string query;
  std::string document;
  std::map<std::string, std::string> meta;
};

// Sentence-embedding hook used by filtering and evaluation; decouples them
// from any particular encoder.
using EmbedFn = std::function<std::vector<double>(const std::string&)>;

struct LoadStats {
  int64_t malformed = 0;
  int64_t too_short = 0;
};

// Line-delimited JSON records with fields "query", "document" and an
// optional "meta" object of strings. Malformed lines are counted and
// skipped; pairs with either side shorter than min_chars after trimming are
// dropped. Zero surviving records is an error.
std::vector<PairRecord> load_pairs(const std::string& path, int64_t limit = 0,
                                   int64_t min_chars = 8, LoadStats* stats = nullptr);

void save_pairs(const std::vector<PairRecord>& pairs, const std::string& path);

struct SyntheticCorpus {
  std::vector<PairRecord> pairs;
  std::vector<std::string> domain_terms;
  // Text without domain terms, plus alphabet coverage lines, suitable for
  // training a general-domain base vocabulary.
  std::vector<std::string> base_corpus;
};

// Deterministic toy corpus. Each pair owns a disjoint core of fresh words
// plus one pseudo-domain term, and shares only filler words with other
// pairs, so each query's own document is its unique nearest neighbor under
// bag-of-words cosine.
SyntheticCorpus gen_synthetic_corpus(uint64_t seed, int64_t n_pairs, int64_t n_domain_terms);

// Exact cosine index: rows are stored unit-normalized and queries are
// scanned in full. Immutable after build.
class CosineIndex {
 public:
  CosineIndex(const std::vector<std::vector<double>>& embeddings, std::vector<std::string> ids);

  int64_t size() const { return static_cast<int64_t>(ids_.size()); }
  int64_t dim() const { return dim_; }
  const std::string& id(int64_t row) const { return ids_[static_cast<size_t>(row)]; }

  // k nearest by cosine, score descending, ties by ascending id; returns all
  // rows when k exceeds the index size. Zero query is an error.
  std::vector<std::pair<std::string, double>> top_k(const std::vector<double>& query, int64_t k) const;

 private:
  std::vector<double> vectors_;  // row-major, unit rows
  std::vector<std::string> ids_;
  int64_t dim_ = 0;
};

CosineIndex build_index(const std::vector<std::vector<double>>& embeddings,
                        std::vector<std::string> ids);

struct FilterReport {
  int64_t retained = 0;
  int64_t discarded = 0;
  int64_t k = 0;
};

struct FilterResult {
  std::vector<PairRecord> retained;
  FilterReport report;
};

// Keeps pair i iff its own document appears among the top-k hits for its
// query over the full document index. Input order is preserved.
FilterResult consistency_filter(const std::vector<PairRecord>& pairs, const EmbedFn& embed, int64_t k);

// One JSON line: {"discarded":...,"k":...,"retained":...}.
void save_filter_report(const FilterReport& report, const std::string& path);

// Exact bag-of-words embedder over a fixed word list; out-of-list words are
// ignored. Deterministic and independent of any trained model.
class BowEmbedder {
 public:
  explicit BowEmbedder(const std::vector<std::string>& texts);
  std::vector<double> operator()(const std::string& text) const;
  int64_t dim() const { return static_cast<int64_t>(word_dim_.size()); }

 private:
  std::map<std::string, int64_t> word_dim_;
};

}  // namespace mosaic
