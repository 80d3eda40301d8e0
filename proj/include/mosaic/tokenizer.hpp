#pragma once

#include <optional>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "mosaic/tensor.hpp"

namespace mosaic {

// Subword vocabulary. Ids are dense 0..size-1 with the five special tokens
// pinned to ids 0-4. domain_ids marks the tokens added by vocabulary
// augmentation; specials are never domain tokens.
class Vocab {
 public:
  static constexpr int64_t kPad = 0;
  static constexpr int64_t kUnk = 1;
  static constexpr int64_t kMask = 2;
  static constexpr int64_t kCls = 3;
  static constexpr int64_t kSep = 4;
  static constexpr int64_t kNumSpecials = 5;

  // Starts with just the specials.
  static Vocab with_specials();

  int64_t size() const { return static_cast<int64_t>(tokens_.size()); }
  const std::string& token(int64_t id) const;
  std::optional<int64_t> id_of(const std::string& token) const;
  bool contains(const std::string& token) const { return id_of(token).has_value(); }

  bool is_special(int64_t id) const { return id >= 0 && id < kNumSpecials; }
  bool is_domain(int64_t id) const { return domain_ids_.count(id) > 0; }
  std::vector<int64_t> domain_ids_sorted() const;
  int64_t domain_count() const { return static_cast<int64_t>(domain_ids_.size()); }
  // All non-special ids, ascending; the candidate set for all-token scoring.
  std::vector<int64_t> content_ids() const;

  // Appends a token with the next free id. Rejects duplicates.
  int64_t add_token(const std::string& token, bool domain);

  const std::vector<std::string>& tokens() const { return tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int64_t> id_of_;
  std::unordered_set<int64_t> domain_ids_;
};

// Token-id sequence plus the parallel domain flags of each id.
struct Encoding {
  std::vector<int64_t> ids;
  std::vector<char> is_domain;

  int64_t length() const { return static_cast<int64_t>(ids.size()); }
};

// A token appended during vocabulary augmentation, with the base-vocab
// pieces its embedding is initialized from.
struct NewTokenRecord {
  std::string token;
  std::vector<int64_t> decomposition;
  int64_t assigned_id = -1;
};

// Lowercase + whitespace word split shared by training and encoding.
std::vector<std::string> normalize_words(const std::string& text);

// Frequency-greedy WordPiece-style induction: specials, then whole words by
// (count desc, token asc), then "##"-marked substrings by the same order,
// until target_size tokens or candidates run out. Deterministic.
Vocab train_subword_vocab(const std::vector<std::string>& corpus, int64_t target_size);

// Greedy longest-match-first segmentation; a word with no full segmentation
// becomes a single UNK. Output is [CLS] pieces... [SEP], truncated so that
// at most max_len ids remain with SEP kept last.
Encoding encode(const Vocab& vocab, const std::string& text, int64_t max_len);

// Strips specials and joins pieces, dropping "##" continuation markers.
std::string decode(const Vocab& vocab, const Encoding& encoding);

struct AugmentResult {
  Vocab vocab;
  std::vector<NewTokenRecord> records;
};

// Appends up to max_new domain tokens missing from base, in domain frequency
// rank order. A candidate whose base segmentation hits UNK is skipped. Base
// token ids are untouched; every added id is flagged as domain.
AugmentResult augment_vocabulary(const Vocab& base, const Vocab& domain, int64_t max_new);

// Grows an embedding matrix [Vxd] -> [(V+n)xd]; original rows are copied
// bit-identically and each new row is the arithmetic mean of its
// decomposition rows.
Tensor init_new_embeddings(const Tensor& matrix, const std::vector<NewTokenRecord>& records);

// One token per line, line number == id. The domain sidecar lists domain
// token strings in ascending id order. Byte-reproducible.
void save_vocab(const Vocab& vocab, const std::string& path, const std::string& domain_sidecar_path);
Vocab load_vocab(const std::string& path, const std::string& domain_sidecar_path);

}  // namespace mosaic
