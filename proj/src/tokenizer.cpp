#include "mosaic/tokenizer.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include "mosaic/io.hpp"

namespace mosaic {

namespace {

const char* kSpecialNames[] = {"[PAD]", "[UNK]", "[MASK]", "[CLS]", "[SEP]"};
constexpr const char* kContinuation = "##";

bool has_continuation_marker(const std::string& t) {
  return t.size() > 2 && t[0] == '#' && t[1] == '#';
}

}  // namespace

Vocab Vocab::with_specials() {
  Vocab v;
  for (const char* s : kSpecialNames) v.add_token(s, false);
  return v;
}

const std::string& Vocab::token(int64_t id) const {
  if (id < 0 || id >= size()) throw std::out_of_range("vocab: id " + std::to_string(id) + " out of range");
  return tokens_[static_cast<size_t>(id)];
}

std::optional<int64_t> Vocab::id_of(const std::string& token) const {
  auto it = id_of_.find(token);
  if (it == id_of_.end()) return std::nullopt;
  return it->second;
}

std::vector<int64_t> Vocab::domain_ids_sorted() const {
  std::vector<int64_t> ids(domain_ids_.begin(), domain_ids_.end());
  std::sort(ids.begin(), ids.end());
  return ids;
}

std::vector<int64_t> Vocab::content_ids() const {
  std::vector<int64_t> ids;
  ids.reserve(static_cast<size_t>(size() - kNumSpecials));
  for (int64_t i = kNumSpecials; i < size(); ++i) ids.push_back(i);
  return ids;
}

int64_t Vocab::add_token(const std::string& token, bool domain) {
  if (token.empty()) throw std::invalid_argument("vocab: empty token");
  if (id_of_.count(token)) throw std::invalid_argument("vocab: duplicate token '" + token + "'");
  const int64_t id = size();
  tokens_.push_back(token);
  id_of_[token] = id;
  if (domain) {
    if (id < kNumSpecials) throw std::invalid_argument("vocab: specials cannot be domain tokens");
    domain_ids_.insert(id);
  }
  return id;
}

std::vector<std::string> normalize_words(const std::string& text) {
  std::vector<std::string> words;
  std::string cur;
  for (char ch : text) {
    if (std::isspace(static_cast<unsigned char>(ch))) {
      if (!cur.empty()) {
        words.push_back(cur);
        cur.clear();
      }
    } else {
      cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
    }
  }
  if (!cur.empty()) words.push_back(cur);
  return words;
}

Vocab train_subword_vocab(const std::vector<std::string>& corpus, int64_t target_size) {
  if (target_size <= Vocab::kNumSpecials)
    throw std::invalid_argument("train_subword_vocab: target_size must exceed the special count");
  if (corpus.empty()) throw std::invalid_argument("train_subword_vocab: empty corpus");

  std::map<std::string, int64_t> word_counts;  // ordered: ties resolve lexicographically
  for (const auto& line : corpus)
    for (const auto& w : normalize_words(line)) word_counts[w] += 1;
  if (word_counts.empty())
    throw std::invalid_argument("train_subword_vocab: corpus has no tokenizable characters");

  Vocab vocab = Vocab::with_specials();

  auto ranked = [](const std::map<std::string, int64_t>& counts) {
    std::vector<std::pair<std::string, int64_t>> items(counts.begin(), counts.end());
    std::stable_sort(items.begin(), items.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });
    return items;
  };

  // Whole words first.
  for (const auto& [word, count] : ranked(word_counts)) {
    (void)count;
    if (vocab.size() >= target_size) return vocab;
    if (!vocab.contains(word)) vocab.add_token(word, false);
  }

  // Then continuation-marked substrings, scored per occurrence position.
  std::map<std::string, int64_t> sub_counts;
  for (const auto& [word, count] : word_counts) {
    const int64_t n = static_cast<int64_t>(word.size());
    for (int64_t start = 1; start < n; ++start)
      for (int64_t end = start + 1; end <= n; ++end)
        sub_counts[kContinuation + word.substr(static_cast<size_t>(start),
                                               static_cast<size_t>(end - start))] += count;
  }
  for (const auto& [sub, count] : ranked(sub_counts)) {
    (void)count;
    if (vocab.size() >= target_size) return vocab;
    if (!vocab.contains(sub)) vocab.add_token(sub, false);
  }
  return vocab;
}

namespace {

// Longest-match pieces of one word, or empty if any span fails to match.
std::vector<int64_t> segment_word(const Vocab& vocab, const std::string& word, bool continuation_start) {
  std::vector<int64_t> pieces;
  size_t pos = 0;
  bool first = !continuation_start;
  while (pos < word.size()) {
    int64_t match = -1;
    size_t match_len = 0;
    for (size_t len = word.size() - pos; len >= 1; --len) {
      std::string cand = word.substr(pos, len);
      if (!first) cand = kContinuation + cand;
      auto id = vocab.id_of(cand);
      // Specials are not reachable through segmentation.
      if (id && !vocab.is_special(*id)) {
        match = *id;
        match_len = len;
        break;
      }
    }
    if (match < 0) return {};
    pieces.push_back(match);
    pos += match_len;
    first = false;
  }
  return pieces;
}

}  // namespace

Encoding encode(const Vocab& vocab, const std::string& text, int64_t max_len) {
  if (max_len < 2) throw std::invalid_argument("encode: max_len must be at least 2");
  std::vector<int64_t> ids{Vocab::kCls};
  for (const auto& word : normalize_words(text)) {
    auto pieces = segment_word(vocab, word, false);
    if (pieces.empty()) {
      ids.push_back(Vocab::kUnk);
    } else {
      ids.insert(ids.end(), pieces.begin(), pieces.end());
    }
  }
  // Keep SEP last under truncation.
  if (static_cast<int64_t>(ids.size()) + 1 > max_len) ids.resize(static_cast<size_t>(max_len - 1));
  ids.push_back(Vocab::kSep);

  Encoding enc;
  enc.ids = std::move(ids);
  enc.is_domain.reserve(enc.ids.size());
  for (int64_t id : enc.ids) enc.is_domain.push_back(vocab.is_domain(id) ? 1 : 0);
  return enc;
}

std::string decode(const Vocab& vocab, const Encoding& encoding) {
  std::string out;
  for (int64_t id : encoding.ids) {
    if (id < 0 || id >= vocab.size())
      throw std::out_of_range("decode: id " + std::to_string(id) + " out of range");
    if (vocab.is_special(id)) continue;
    const std::string& tok = vocab.token(id);
    if (has_continuation_marker(tok)) {
      out += tok.substr(2);
    } else {
      if (!out.empty()) out += ' ';
      out += tok;
    }
  }
  return out;
}

AugmentResult augment_vocabulary(const Vocab& base, const Vocab& domain, int64_t max_new) {
  if (max_new < 0) throw std::invalid_argument("augment_vocabulary: max_new must be non-negative");
  AugmentResult result;
  result.vocab = base;
  if (max_new == 0) return result;

  // Domain vocab order is its frequency rank.
  for (int64_t id = Vocab::kNumSpecials; id < domain.size(); ++id) {
    if (static_cast<int64_t>(result.records.size()) >= max_new) break;
    const std::string& tok = domain.token(id);
    if (result.vocab.contains(tok)) continue;

    std::vector<int64_t> decomposition;
    if (has_continuation_marker(tok)) {
      decomposition = segment_word(base, tok.substr(2), true);
    } else {
      decomposition = segment_word(base, tok, false);
    }
    if (decomposition.empty()) continue;  // would need UNK; not added

    NewTokenRecord rec;
    rec.token = tok;
    rec.decomposition = std::move(decomposition);
    rec.assigned_id = result.vocab.add_token(tok, true);
    result.records.push_back(std::move(rec));
  }
  return result;
}

Tensor init_new_embeddings(const Tensor& matrix, const std::vector<NewTokenRecord>& records) {
  const int64_t v = matrix.rows(), d = matrix.cols();
  const int64_t n = static_cast<int64_t>(records.size());
  Tensor out(Shape(v + n, d));
  std::copy(matrix.data(), matrix.data() + v * d, out.data());
  for (int64_t r = 0; r < n; ++r) {
    const auto& rec = records[static_cast<size_t>(r)];
    if (rec.decomposition.empty())
      throw std::invalid_argument("init_new_embeddings: empty decomposition for '" + rec.token + "'");
    double* dst = out.data() + (v + r) * d;
    for (int64_t src_id : rec.decomposition) {
      if (src_id < 0 || src_id >= v)
        throw std::out_of_range("init_new_embeddings: decomposition id " + std::to_string(src_id) +
                                " outside base matrix");
      const double* src = matrix.data() + src_id * d;
      for (int64_t j = 0; j < d; ++j) dst[j] += src[j];
    }
    const double inv = 1.0 / static_cast<double>(rec.decomposition.size());
    for (int64_t j = 0; j < d; ++j) dst[j] *= inv;
  }
  return out;
}

void save_vocab(const Vocab& vocab, const std::string& path, const std::string& domain_sidecar_path) {
  std::string body;
  for (int64_t i = 0; i < vocab.size(); ++i) {
    body += vocab.token(i);
    body += '\n';
  }
  atomic_write_file(path, body);

  std::string sidecar;
  for (int64_t id : vocab.domain_ids_sorted()) {
    sidecar += vocab.token(id);
    sidecar += '\n';
  }
  atomic_write_file(domain_sidecar_path, sidecar);
}

Vocab load_vocab(const std::string& path, const std::string& domain_sidecar_path) {
  const std::string body = read_file(path);
  std::vector<std::string> lines;
  {
    std::istringstream in(body);
    std::string line;
    while (std::getline(in, line)) lines.push_back(line);
  }
  if (lines.size() < static_cast<size_t>(Vocab::kNumSpecials))
    throw std::runtime_error("load_vocab: file too short: " + path);
  for (int64_t i = 0; i < Vocab::kNumSpecials; ++i)
    if (lines[static_cast<size_t>(i)] != kSpecialNames[i])
      throw std::runtime_error("load_vocab: special tokens corrupted in " + path);

  std::unordered_set<std::string> domain_tokens;
  {
    std::istringstream in(read_file(domain_sidecar_path));
    std::string line;
    while (std::getline(in, line))
      if (!line.empty()) domain_tokens.insert(line);
  }

  Vocab vocab = Vocab::with_specials();
  for (size_t i = static_cast<size_t>(Vocab::kNumSpecials); i < lines.size(); ++i) {
    if (lines[i].empty()) throw std::runtime_error("load_vocab: empty token line in " + path);
    vocab.add_token(lines[i], domain_tokens.count(lines[i]) > 0);
  }
  return vocab;
}

}  // namespace mosaic
