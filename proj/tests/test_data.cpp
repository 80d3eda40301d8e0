#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>

#include "mosaic/data.hpp"
#include "mosaic/io.hpp"
#include "mosaic/tokenizer.hpp"

using namespace mosaic;

namespace {

std::string temp_path(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "mosaic_data_test";
  std::filesystem::create_directories(dir);
  return (dir / name).string();
}

// Brute-force cosine ranking used as the independent oracle.
std::vector<size_t> oracle_ranking(const std::vector<double>& q,
                                   const std::vector<std::vector<double>>& docs) {
  auto cosine = [](const std::vector<double>& a, const std::vector<double>& b) {
    double dot = 0, na = 0, nb = 0;
    for (size_t i = 0; i < a.size(); ++i) {
      dot += a[i] * b[i];
      na += a[i] * a[i];
      nb += b[i] * b[i];
    }
    return dot / std::sqrt(na * nb);
  };
  std::vector<size_t> order(docs.size());
  for (size_t i = 0; i < docs.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](size_t a, size_t b) { return cosine(q, docs[a]) > cosine(q, docs[b]); });
  return order;
}

}  // namespace

TEST_CASE("load_pairs keeps order, skips malformed, drops short") {
  const std::string path = temp_path("pairs.jsonl");
  atomic_write_file(path,
                    R"({"query":"first query text","document":"first document text"})"
                    "\n"
                    R"({"query":"missing doc"})"
                    "\n"
                    "not json at all\n"
                    R"({"query":"q2","document":"tiny"})"
                    "\n"
                    R"({"query":"second query text","document":"second document text","meta":{"k":"v"}})"
                    "\n");
  LoadStats stats;
  auto pairs = load_pairs(path, 0, 8, &stats);
  REQUIRE(pairs.size() == 2);
  CHECK(pairs[0].query == "first query text");
  CHECK(pairs[1].meta.at("k") == "v");
  CHECK(stats.malformed == 2);
  CHECK(stats.too_short == 1);

  auto limited = load_pairs(path, 1, 8);
  CHECK(limited.size() == 1);
  CHECK(limited[0].query == "first query text");

  atomic_write_file(path, R"({"query":"q"})" "\n");
  CHECK_THROWS(load_pairs(path));
  CHECK_THROWS(load_pairs(temp_path("missing_file.jsonl")));
}

TEST_CASE("gen_synthetic_corpus is deterministic and self-consistent") {
  SyntheticCorpus a = gen_synthetic_corpus(7, 12, 4);
  SyntheticCorpus b = gen_synthetic_corpus(7, 12, 4);
  REQUIRE(a.pairs.size() == 12);
  CHECK(a.domain_terms.size() == 4);
  for (size_t i = 0; i < a.pairs.size(); ++i) {
    CHECK(a.pairs[i].query == b.pairs[i].query);
    CHECK(a.pairs[i].document == b.pairs[i].document);
  }
  CHECK(a.base_corpus == b.base_corpus);

  SyntheticCorpus c = gen_synthetic_corpus(8, 12, 4);
  CHECK(a.pairs[0].query != c.pairs[0].query);

  // Every pair carries a domain term on both sides.
  for (const auto& p : a.pairs) {
    bool q_term = false, d_term = false;
    for (const auto& t : a.domain_terms) {
      if (p.query.find(t) != std::string::npos) q_term = true;
      if (p.document.find(t) != std::string::npos) d_term = true;
    }
    CHECK(q_term);
    CHECK(d_term);
  }

  // Base corpus never mentions a domain term.
  for (const auto& line : a.base_corpus)
    for (const auto& t : a.domain_terms) CHECK(line.find(t) == std::string::npos);
}

TEST_CASE("bag-of-words oracle ranks each synthetic pair's own document first") {
  SyntheticCorpus corpus = gen_synthetic_corpus(21, 10, 3);
  std::vector<std::string> texts;
  for (const auto& p : corpus.pairs) {
    texts.push_back(p.query);
    texts.push_back(p.document);
  }
  BowEmbedder bow(texts);
  std::vector<std::vector<double>> docs;
  for (const auto& p : corpus.pairs) docs.push_back(bow(p.document));
  for (size_t i = 0; i < corpus.pairs.size(); ++i) {
    auto order = oracle_ranking(bow(corpus.pairs[i].query), docs);
    CHECK(order[0] == i);
  }
}

TEST_CASE("build_index normalizes rows and rejects bad input") {
  CosineIndex idx = build_index({{3.0, 4.0}}, {"only"});
  CHECK(idx.size() == 1);
  auto hits = idx.top_k({3.0, 4.0}, 1);
  CHECK(hits[0].first == "only");
  CHECK(hits[0].second == doctest::Approx(1.0).epsilon(1e-9));

  CHECK_THROWS(build_index({{0.0, 0.0}}, {"zero"}));
  CHECK_THROWS(build_index({{1.0, 0.0}, {0.0, 1.0}}, {"dup", "dup"}));
  CHECK_THROWS(build_index({}, {}));
}

TEST_CASE("top_k matches hand-computed cosines and clamps k") {
  // Three vectors at known angles to the query [1, 0].
  CosineIndex idx = build_index(
      {{1.0, 0.0}, {1.0, 1.0}, {0.0, 1.0}}, {"exact", "diag", "ortho"});
  auto hits = idx.top_k({2.0, 0.0}, 10);  // k > N returns all N
  REQUIRE(hits.size() == 3);
  CHECK(hits[0].first == "exact");
  CHECK(hits[0].second == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(hits[1].first == "diag");
  CHECK(hits[1].second == doctest::Approx(std::sqrt(0.5)).epsilon(1e-12));
  CHECK(hits[2].first == "ortho");
  CHECK(hits[2].second == doctest::Approx(0.0).epsilon(1e-12));

  // Scores are non-increasing and within [-1, 1].
  for (size_t i = 0; i + 1 < hits.size(); ++i) CHECK(hits[i].second >= hits[i + 1].second);
  for (const auto& [id, score] : hits) {
    (void)id;
    CHECK(score <= 1.0 + 1e-9);
    CHECK(score >= -1.0 - 1e-9);
  }

  CHECK_THROWS(idx.top_k({0.0, 0.0}, 1));
  CHECK_THROWS(idx.top_k({1.0, 0.0}, 0));
}

TEST_CASE("top_k breaks exact ties by ascending id") {
  CosineIndex idx = build_index({{1.0, 0.0}, {1.0, 0.0}, {1.0, 0.0}}, {"b", "a", "c"});
  auto hits = idx.top_k({1.0, 0.0}, 3);
  CHECK(hits[0].first == "a");
  CHECK(hits[1].first == "b");
  CHECK(hits[2].first == "c");
}

TEST_CASE("consistency_filter retains aligned pairs and drops misaligned ones") {
  // Unit axes: query i maps exactly onto document i.
  std::vector<PairRecord> pairs(3);
  std::vector<std::vector<double>> vecs = {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
  for (size_t i = 0; i < 3; ++i) {
    pairs[i].query = "q" + std::to_string(i);
    pairs[i].document = "d" + std::to_string(i);
  }
  auto aligned = [&](const std::string& text) {
    const size_t idx = static_cast<size_t>(text[1] - '0');
    return vecs[idx];
  };
  FilterResult all = consistency_filter(pairs, aligned, 1);
  CHECK(all.retained.size() == 3);
  CHECK(all.report.discarded == 0);

  // k = N keeps everything no matter how embeddings look.
  auto arbitrary = [&](const std::string& text) {
    std::vector<double> v(3, 0.5);
    v[static_cast<size_t>(text[1] - '0')] += text[0] == 'q' ? 0.1 : 0.2;
    return v;
  };
  FilterResult topn = consistency_filter(pairs, arbitrary, 3);
  CHECK(topn.retained.size() == 3);

  // Hand-built geometry: query 1's own document ranks 3rd, so k=2 drops it.
  std::vector<PairRecord> three(3);
  for (size_t i = 0; i < 3; ++i) {
    three[i].query = "q" + std::to_string(i);
    three[i].document = "d" + std::to_string(i);
  }
  auto skewed = [&](const std::string& text) -> std::vector<double> {
    if (text == "q0") return {1.0, 0.0, 0.0};
    if (text == "q1") return {0.9, 0.43, 0.0};  // closest to d0, then d2, then d1
    if (text == "q2") return {0.0, 0.0, 1.0};
    if (text == "d0") return {1.0, 0.0, 0.0};
    if (text == "d1") return {0.0, 1.0, 0.0};
    return {0.6, 0.0, 0.8};  // d2
  };
  FilterResult dropped = consistency_filter(three, skewed, 2);
  CHECK(dropped.report.discarded == 1);
  REQUIRE(dropped.retained.size() == 2);
  CHECK(dropped.retained[0].query == "q0");
  CHECK(dropped.retained[1].query == "q2");

  // Monotone in k, and idempotent at fixed k.
  FilterResult k1 = consistency_filter(three, skewed, 1);
  std::set<std::string> k1_set, k2_set;
  for (const auto& p : k1.retained) k1_set.insert(p.query);
  for (const auto& p : dropped.retained) k2_set.insert(p.query);
  for (const auto& q : k1_set) CHECK(k2_set.count(q) == 1);

  FilterResult again = consistency_filter(dropped.retained, skewed, 2);
  CHECK(again.retained.size() == dropped.retained.size());
  CHECK(again.report.discarded == 0);
}

TEST_CASE("consistency_filter propagates embedding errors with the pair index") {
  std::vector<PairRecord> pairs(2);
  pairs[0] = {"ok query", "ok doc", {}};
  pairs[1] = {"boom", "ok doc 2", {}};
  auto embed = [](const std::string& text) -> std::vector<double> {
    if (text == "boom") throw std::runtime_error("bad text");
    return {1.0, 0.0};
  };
  try {
    consistency_filter(pairs, embed, 1);
    FAIL("expected an exception");
  } catch (const std::exception& e) {
    CHECK(std::string(e.what()).find("pair 1") != std::string::npos);
  }
}

TEST_CASE("filter report serializes as one JSON line") {
  const std::string path = temp_path("report.jsonl");
  save_filter_report({190, 10, 5}, path);
  const std::string body = read_file(path);
  CHECK(body == "{\"discarded\":10,\"k\":5,\"retained\":190}\n");
}
