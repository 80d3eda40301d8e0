#include "mosaic/data.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "mosaic/io.hpp"
#include "mosaic/rng.hpp"
#include "mosaic/tokenizer.hpp"

namespace mosaic {

namespace {

std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace

std::vector<PairRecord> load_pairs(const std::string& path, int64_t limit, int64_t min_chars,
                                   LoadStats* stats) {
  const std::string body = read_file(path);
  std::istringstream in(body);
  std::string line;
  std::vector<PairRecord> records;
  LoadStats local;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    if (limit > 0 && static_cast<int64_t>(records.size()) >= limit) break;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object() || !j.contains("query") || !j.contains("document") ||
        !j["query"].is_string() || !j["document"].is_string()) {
      local.malformed += 1;
      continue;
    }
    PairRecord rec;
    rec.query = trim(j["query"].get<std::string>());
    rec.document = trim(j["document"].get<std::string>());
    if (j.contains("meta")) {
      if (!j["meta"].is_object()) {
        local.malformed += 1;
        continue;
      }
      bool ok = true;
      for (auto it = j["meta"].begin(); it != j["meta"].end(); ++it) {
        if (!it.value().is_string()) {
          ok = false;
          break;
        }
        rec.meta[it.key()] = it.value().get<std::string>();
      }
      if (!ok) {
        local.malformed += 1;
        continue;
      }
    }
    if (static_cast<int64_t>(rec.query.size()) < min_chars ||
        static_cast<int64_t>(rec.document.size()) < min_chars) {
      local.too_short += 1;
      continue;
    }
    records.push_back(std::move(rec));
  }
  if (stats) *stats = local;
  if (records.empty()) throw std::runtime_error("load_pairs: no valid records in " + path);
  return records;
}

void save_pairs(const std::vector<PairRecord>& pairs, const std::string& path) {
  std::string body;
  for (const auto& p : pairs) {
    nlohmann::json j;
    j["query"] = p.query;
    j["document"] = p.document;
    if (!p.meta.empty()) j["meta"] = p.meta;
    body += j.dump();
    body += '\n';
  }
  atomic_write_file(path, body);
}

namespace {

std::string random_word(Rng& rng, int64_t len, const std::string& alphabet) {
  std::string w;
  for (int64_t i = 0; i < len; ++i)
    w.push_back(alphabet[static_cast<size_t>(rng.bounded(alphabet.size()))]);
  return w;
}

std::string fresh_word(Rng& rng, int64_t len, const std::string& alphabet,
                       std::set<std::string>& used) {
  for (;;) {
    std::string w = random_word(rng, len, alphabet);
    if (used.insert(w).second) return w;
  }
}

std::string join_words(const std::vector<std::string>& words) {
  std::string out;
  for (const auto& w : words) {
    if (!out.empty()) out += ' ';
    out += w;
  }
  return out;
}

}  // namespace

SyntheticCorpus gen_synthetic_corpus(uint64_t seed, int64_t n_pairs, int64_t n_domain_terms) {
  if (n_pairs < 2) throw std::invalid_argument("gen_synthetic_corpus: n_pairs must be >= 2");
  if (n_domain_terms < 1)
    throw std::invalid_argument("gen_synthetic_corpus: n_domain_terms must be >= 1");

  Rng rng(mix_seed(seed, 0xC0FFEE));
  const std::string alphabet = "abcdefghijklmnopqrstuvwxyz";
  std::set<std::string> used;

  SyntheticCorpus corpus;
  // Domain terms carry a fixed marker prefix so they never collide with
  // filler or core words by accident.
  for (int64_t i = 0; i < n_domain_terms; ++i)
    corpus.domain_terms.push_back("zq" + fresh_word(rng, 6, alphabet, used));
  for (const auto& t : corpus.domain_terms) used.insert(t);

  constexpr int64_t kNumFillers = 30;
  std::vector<std::string> fillers;
  for (int64_t i = 0; i < kNumFillers; ++i) fillers.push_back(fresh_word(rng, 4, alphabet, used));

  for (int64_t p = 0; p < n_pairs; ++p) {
    // 4 core words + 1 domain term are shared by the pair; at most 2 fillers
    // plus the term can be shared across different pairs, so the true
    // document wins every bag-of-words comparison outright.
    std::vector<std::string> core;
    for (int64_t i = 0; i < 4; ++i) core.push_back(fresh_word(rng, 6, alphabet, used));
    const std::string& term = corpus.domain_terms[static_cast<size_t>(p % n_domain_terms)];
    core.push_back(term);

    std::vector<std::string> query_words = core;
    for (int64_t i = 0; i < 2; ++i)
      query_words.push_back(fillers[static_cast<size_t>(rng.bounded(fillers.size()))]);
    std::vector<std::string> doc_words = core;
    for (int64_t i = 0; i < 2; ++i)
      doc_words.push_back(fillers[static_cast<size_t>(rng.bounded(fillers.size()))]);
    doc_words.push_back(fresh_word(rng, 6, alphabet, used));
    rng.shuffle(query_words);
    rng.shuffle(doc_words);

    PairRecord rec;
    rec.query = join_words(query_words);
    rec.document = join_words(doc_words);
    corpus.pairs.push_back(std::move(rec));
  }

  // Base corpus: the shared filler words plus alphabet coverage lines. The
  // coverage lines guarantee every letter exists as a word-initial and a
  // continuation piece, so any domain term decomposes without UNK. Topic
  // words stay out: whole words fill the vocabulary budget first, and a
  // flood of one-off words would squeeze out the subword pieces entirely.
  std::string singles, doubles;
  for (char ch : alphabet) {
    if (!singles.empty()) singles += ' ';
    singles += ch;
    if (!doubles.empty()) doubles += ' ';
    doubles += ch;
    doubles += ch;
  }
  const std::string filler_line = join_words(fillers);
  for (int64_t i = 0; i < 40; ++i) {
    corpus.base_corpus.push_back(singles);
    corpus.base_corpus.push_back(doubles);
    corpus.base_corpus.push_back(filler_line);
  }
  return corpus;
}

CosineIndex::CosineIndex(const std::vector<std::vector<double>>& embeddings,
                         std::vector<std::string> ids)
    : ids_(std::move(ids)) {
  if (embeddings.empty()) throw std::invalid_argument("cosine index: no rows");
  if (embeddings.size() != ids_.size())
    throw std::invalid_argument("cosine index: id count must match row count");
  std::set<std::string> seen;
  for (const auto& id : ids_)
    if (!seen.insert(id).second)
      throw std::invalid_argument("cosine index: duplicate id '" + id + "'");

  dim_ = static_cast<int64_t>(embeddings[0].size());
  vectors_.resize(embeddings.size() * static_cast<size_t>(dim_));
  for (size_t r = 0; r < embeddings.size(); ++r) {
    if (static_cast<int64_t>(embeddings[r].size()) != dim_)
      throw std::invalid_argument("cosine index: ragged embedding rows");
    double nrm2 = 0.0;
    for (double v : embeddings[r]) nrm2 += v * v;
    const double nrm = std::sqrt(nrm2);
    if (!(nrm > 1e-12) || !std::isfinite(nrm))
      throw std::runtime_error("cosine index: zero or non-finite vector for id '" + ids_[r] + "'");
    for (int64_t j = 0; j < dim_; ++j)
      vectors_[r * static_cast<size_t>(dim_) + static_cast<size_t>(j)] =
          embeddings[r][static_cast<size_t>(j)] / nrm;
  }
}

std::vector<std::pair<std::string, double>> CosineIndex::top_k(const std::vector<double>& query,
                                                               int64_t k) const {
  if (k < 1) throw std::invalid_argument("top_k: k must be >= 1");
  if (static_cast<int64_t>(query.size()) != dim_)
    throw std::invalid_argument("top_k: query dimension mismatch");
  double nrm2 = 0.0;
  for (double v : query) nrm2 += v * v;
  const double nrm = std::sqrt(nrm2);
  if (!(nrm > 1e-12) || !std::isfinite(nrm)) throw std::runtime_error("top_k: zero query vector");

  const int64_t n = size();
  std::vector<std::pair<double, int64_t>> scored(static_cast<size_t>(n));
  for (int64_t r = 0; r < n; ++r) {
    double s = 0.0;
    const double* row = vectors_.data() + r * dim_;
    for (int64_t j = 0; j < dim_; ++j) s += row[j] * query[static_cast<size_t>(j)];
    scored[static_cast<size_t>(r)] = {s / nrm, r};
  }
  const int64_t kk = std::min(k, n);
  auto cmp = [&](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return ids_[static_cast<size_t>(a.second)] < ids_[static_cast<size_t>(b.second)];
  };
  std::partial_sort(scored.begin(), scored.begin() + kk, scored.end(), cmp);
  std::vector<std::pair<std::string, double>> out;
  out.reserve(static_cast<size_t>(kk));
  for (int64_t i = 0; i < kk; ++i)
    out.emplace_back(ids_[static_cast<size_t>(scored[static_cast<size_t>(i)].second)],
                     scored[static_cast<size_t>(i)].first);
  return out;
}

CosineIndex build_index(const std::vector<std::vector<double>>& embeddings,
                        std::vector<std::string> ids) {
  return CosineIndex(embeddings, std::move(ids));
}

namespace {

std::string pair_id(size_t i) {
  char buf[24];
  std::snprintf(buf, sizeof(buf), "%08zu", i);
  return buf;
}

}  // namespace

FilterResult consistency_filter(const std::vector<PairRecord>& pairs, const EmbedFn& embed,
                                int64_t k) {
  if (k < 1) throw std::invalid_argument("consistency_filter: k must be >= 1");
  if (pairs.empty()) throw std::invalid_argument("consistency_filter: no pairs");

  std::vector<std::vector<double>> doc_embs(pairs.size());
  std::vector<std::vector<double>> query_embs(pairs.size());
  std::vector<std::string> ids(pairs.size());
  for (size_t i = 0; i < pairs.size(); ++i) {
    try {
      query_embs[i] = embed(pairs[i].query);
      doc_embs[i] = embed(pairs[i].document);
    } catch (const std::exception& e) {
      throw std::runtime_error("consistency_filter: embedding failed for pair " +
                               std::to_string(i) + ": " + e.what());
    }
    ids[i] = pair_id(i);
  }

  CosineIndex index(doc_embs, ids);
  FilterResult result;
  result.report.k = k;
  for (size_t i = 0; i < pairs.size(); ++i) {
    const auto hits = index.top_k(query_embs[i], k);
    bool found = false;
    for (const auto& [id, score] : hits) {
      (void)score;
      if (id == ids[i]) {
        found = true;
        break;
      }
    }
    if (found) {
      result.retained.push_back(pairs[i]);
      result.report.retained += 1;
    } else {
      result.report.discarded += 1;
    }
  }
  return result;
}

void save_filter_report(const FilterReport& report, const std::string& path) {
  nlohmann::json j;
  j["retained"] = report.retained;
  j["discarded"] = report.discarded;
  j["k"] = report.k;
  atomic_write_file(path, j.dump() + "\n");
}

BowEmbedder::BowEmbedder(const std::vector<std::string>& texts) {
  int64_t next = 0;
  std::set<std::string> words;
  for (const auto& t : texts)
    for (const auto& w : normalize_words(t)) words.insert(w);
  for (const auto& w : words) word_dim_[w] = next++;
}

std::vector<double> BowEmbedder::operator()(const std::string& text) const {
  std::vector<double> v(static_cast<size_t>(word_dim_.size()), 0.0);
  for (const auto& w : normalize_words(text)) {
    auto it = word_dim_.find(w);
    if (it != word_dim_.end()) v[static_cast<size_t>(it->second)] += 1.0;
  }
  return v;
}

}  // namespace mosaic
