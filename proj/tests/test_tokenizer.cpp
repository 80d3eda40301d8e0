#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "mosaic/io.hpp"
#include "mosaic/tokenizer.hpp"

using namespace mosaic;

TEST_CASE("specials occupy ids 0-4 in any trained vocab") {
  Vocab v = train_subword_vocab({"aa aa aa"}, 6);
  CHECK(v.token(0) == "[PAD]");
  CHECK(v.token(1) == "[UNK]");
  CHECK(v.token(2) == "[MASK]");
  CHECK(v.token(3) == "[CLS]");
  CHECK(v.token(4) == "[SEP]");
  CHECK(v.contains("aa"));
  CHECK(v.size() == 6);
}

TEST_CASE("single-character words rank by frequency") {
  // 15 slots beyond the specials; chars a..o appear with descending counts,
  // p..z only once each.
  std::vector<std::string> corpus;
  for (int i = 0; i < 15; ++i) {
    std::string line;
    for (int rep = 0; rep < 20 - i; ++rep) {
      line += static_cast<char>('a' + i);
      line += ' ';
    }
    corpus.push_back(line);
  }
  for (char c = 'p'; c <= 'z'; ++c) corpus.push_back(std::string(1, c));
  Vocab v = train_subword_vocab(corpus, 20);
  CHECK(v.size() == 20);
  for (char c = 'a'; c <= 'o'; ++c) CHECK(v.contains(std::string(1, c)));
  for (char c = 'p'; c <= 'z'; ++c) CHECK(!v.contains(std::string(1, c)));
}

TEST_CASE("training rejects degenerate corpora") {
  CHECK_THROWS(train_subword_vocab({}, 10));
  CHECK_THROWS(train_subword_vocab({"   \t  "}, 10));
  CHECK_THROWS(train_subword_vocab({"abc"}, 5));
}

TEST_CASE("encode basics") {
  Vocab v = Vocab::with_specials();
  v.add_token("ab", false);
  v.add_token("##cd", false);

  Encoding empty = encode(v, "", 16);
  CHECK(empty.ids == std::vector<int64_t>{Vocab::kCls, Vocab::kSep});

  Encoding unk = encode(v, "xyz", 16);
  CHECK(unk.ids == std::vector<int64_t>{Vocab::kCls, Vocab::kUnk, Vocab::kSep});

  Encoding split = encode(v, "abcd", 16);
  CHECK(split.ids == std::vector<int64_t>{Vocab::kCls, 5, 6, Vocab::kSep});
}

TEST_CASE("encode lowercases, truncates and never emits MASK") {
  Vocab v = Vocab::with_specials();
  v.add_token("ab", false);
  v.add_token("##cd", false);
  Encoding upper = encode(v, "ABCD", 16);
  CHECK(upper.ids == std::vector<int64_t>{Vocab::kCls, 5, 6, Vocab::kSep});

  Encoding truncated = encode(v, "abcd abcd abcd", 5);
  CHECK(truncated.ids.size() == 5);
  CHECK(truncated.ids.front() == Vocab::kCls);
  CHECK(truncated.ids.back() == Vocab::kSep);

  // Text spelling out the mask token must not smuggle the special id in.
  Encoding masked = encode(v, "[mask]", 16);
  for (int64_t id : masked.ids) CHECK(id != Vocab::kMask);

  CHECK_THROWS(encode(v, "ab", 1));
}

TEST_CASE("decode strips specials and joins continuations") {
  Vocab v = Vocab::with_specials();
  v.add_token("ab", false);
  v.add_token("##cd", false);
  v.add_token("word", false);

  Encoding e;
  e.ids = {Vocab::kCls, Vocab::kSep};
  e.is_domain = {0, 0};
  CHECK(decode(v, e) == "");

  Encoding joined;
  joined.ids = {Vocab::kCls, 5, 6, Vocab::kSep};
  joined.is_domain = {0, 0, 0, 0};
  CHECK(decode(v, joined) == "abcd");

  Encoding bad;
  bad.ids = {99};
  bad.is_domain = {0};
  CHECK_THROWS(decode(v, bad));
}

TEST_CASE("round-trip for in-vocab words") {
  Vocab v = train_subword_vocab({"alpha beta gamma delta", "alpha beta", "gamma"}, 30);
  for (const std::string word : {"alpha", "beta", "gamma", "delta"}) {
    CHECK(decode(v, encode(v, word, 16)) == word);
  }
  CHECK(decode(v, encode(v, "alpha beta gamma", 32)) == "alpha beta gamma");
}

TEST_CASE("augment_vocabulary appends missing domain tokens in rank order") {
  Vocab base = Vocab::with_specials();
  base.add_token("ab", false);
  base.add_token("##cd", false);

  Vocab domain = Vocab::with_specials();
  domain.add_token("abcd", false);  // decomposes as ab ##cd
  domain.add_token("ab", false);    // already in base
  domain.add_token("qz", false);    // no usable pieces -> skipped

  AugmentResult aug = augment_vocabulary(base, domain, 10);
  REQUIRE(aug.records.size() == 1);
  CHECK(aug.records[0].token == "abcd");
  CHECK(aug.records[0].decomposition == std::vector<int64_t>{5, 6});
  CHECK(aug.records[0].assigned_id == 7);
  CHECK(aug.vocab.is_domain(7));
  CHECK(aug.vocab.size() == base.size() + 1);

  // Base ids are stable.
  for (int64_t i = 0; i < base.size(); ++i) CHECK(aug.vocab.token(i) == base.token(i));
}

TEST_CASE("augment_vocabulary respects max_new and zero is a no-op") {
  Vocab base = Vocab::with_specials();
  base.add_token("a", false);
  base.add_token("##a", false);
  base.add_token("##b", false);
  base.add_token("b", false);

  Vocab domain = Vocab::with_specials();
  domain.add_token("aa", false);
  domain.add_token("ab", false);
  domain.add_token("ba", false);

  AugmentResult none = augment_vocabulary(base, domain, 0);
  CHECK(none.records.empty());
  CHECK(none.vocab.size() == base.size());

  AugmentResult capped = augment_vocabulary(base, domain, 2);
  REQUIRE(capped.records.size() == 2);
  CHECK(capped.records[0].token == "aa");
  CHECK(capped.records[1].token == "ab");
  for (const auto& rec : capped.records) CHECK(capped.vocab.is_domain(rec.assigned_id));
}

TEST_CASE("init_new_embeddings averages decomposition rows and keeps the base bit-identical") {
  Tensor base(Shape(3, 2), {1.0, 0.0, 0.0, 1.0, 3.0, 0.25});

  NewTokenRecord two{"x", {0, 1}, 3};
  NewTokenRecord one{"y", {2}, 4};
  Tensor grown = init_new_embeddings(base, {two, one});
  CHECK(grown.rows() == 5);
  for (int64_t i = 0; i < base.size(); ++i) CHECK(grown[i] == base[i]);
  CHECK(grown.at(3, 0) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(grown.at(3, 1) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(grown.at(4, 0) == 3.0);
  CHECK(grown.at(4, 1) == 0.25);

  NewTokenRecord three{"z", {0, 1, 2}, 3};
  Tensor mean3 = init_new_embeddings(Tensor(Shape(3, 2), {3, 0, 0, 3, 0, 0}), {three});
  CHECK(mean3.at(3, 0) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(mean3.at(3, 1) == doctest::Approx(1.0).epsilon(1e-15));

  NewTokenRecord empty_rec{"w", {}, 3};
  CHECK_THROWS(init_new_embeddings(base, {empty_rec}));

  // Frobenius norm of the original block is exactly preserved.
  double before = 0.0, after = 0.0;
  for (int64_t i = 0; i < base.size(); ++i) before += base[i] * base[i];
  for (int64_t i = 0; i < base.size(); ++i) after += grown[i] * grown[i];
  CHECK(before == after);
}

TEST_CASE("vocab files round-trip byte-identically") {
  Vocab v = train_subword_vocab({"alpha beta beta gamma", "beta gamma"}, 16);
  Vocab domain = Vocab::with_specials();
  domain.add_token("alphabeta", false);
  AugmentResult aug = augment_vocabulary(v, domain, 5);

  const std::string dir = std::filesystem::temp_directory_path() / "mosaic_vocab_test";
  std::filesystem::create_directories(dir);
  const std::string vocab_path = dir + "/vocab.txt";
  const std::string domain_path = dir + "/vocab.domain";
  save_vocab(aug.vocab, vocab_path, domain_path);
  const std::string bytes1 = read_file(vocab_path);

  Vocab loaded = load_vocab(vocab_path, domain_path);
  CHECK(loaded.size() == aug.vocab.size());
  for (int64_t i = 0; i < loaded.size(); ++i) {
    CHECK(loaded.token(i) == aug.vocab.token(i));
    CHECK(loaded.is_domain(i) == aug.vocab.is_domain(i));
  }

  save_vocab(loaded, vocab_path, domain_path);
  CHECK(read_file(vocab_path) == bytes1);
  std::filesystem::remove_all(dir);
}
