#include <cmath>
#include <filesystem>
#include <set>

#include "doctest.h"
#include "lrasr/config.h"
#include "lrasr/features.h"
#include "lrasr/synth.h"

using namespace lrasr;

TEST_CASE("key value parsing") {
  const auto c = KeyValueConfig::Parse("# header\n a = 1 \nb=hello world\n\nlist = 1, 2.5 ,3\nflag = yes\n");
  CHECK(c.GetInt("a", 0) == 1);
  CHECK(c.GetString("b", "") == "hello world");
  CHECK(c.GetDoubleList("list", {}) == std::vector<double>{1.0, 2.5, 3.0});
  CHECK(c.GetBool("flag", false));
  CHECK(c.GetDouble("missing", 4.5) == 4.5);
  CHECK_THROWS(c.GetInt("b", 0));
  CHECK_THROWS(c.GetDouble("b", 0));
  CHECK_THROWS(KeyValueConfig::Parse("no equals sign\n"));
  CHECK_THROWS(KeyValueConfig::Load("/nonexistent/lrasr.cfg"));
  CHECK(c.Canonical() == "a = 1\nb = hello world\nflag = yes\nlist = 1, 2.5 ,3\n");
  CHECK(HexHash(c.Hash()).size() == 16);
}

TEST_CASE("numbers format to round-trip precision") {
  for (double v : {0.1, 1e-4, 2.0 / 3.0, 123456.789, -0.25}) CHECK(std::stod(FormatNumber(v)) == v);
  CHECK(FormatNumber(0.5) == "0.5");
  CHECK(FormatList({0.9, 1.0, 1.1}) == "0.9,1,1.1");
}

TEST_CASE("bigram estimate is a normalized back-off model") {
  const std::vector<std::string> vocab{"a", "b", "c"};
  const NGramLM lm = EstimateBigram({{"a", "b"}, {"a", "c"}, {"b"}}, vocab);
  CHECK(lm.order() == 2);
  for (const std::string h : {"<s>", "a", "b", "c"}) {
    double total = 0;
    for (const std::string w : {"a", "b", "c", "</s>"}) total += std::pow(10.0, lm.Score({h}, w));
    CAPTURE(h);
    CHECK(total == doctest::Approx(1.0).epsilon(1e-9));
  }
  // Seen bigrams beat unseen ones.
  CHECK(lm.Score({"a"}, "b") > lm.Score({"a"}, "a"));
}

TEST_CASE("synthetic corpus is deterministic and consistent") {
  SynthConfig sc;
  sc.num_phones = 8;
  sc.target_phones = 6;
  sc.source_words = 8;
  sc.target_words = 8;
  sc.source_train = 6;
  sc.target_train = 6;
  sc.dev = 4;
  sc.test = 4;
  sc.unsup = 4;
  sc.lm_sentences = 20;
  sc.utts_per_speaker = 2;
  const SynthCorpus a = GenerateCorpus(sc);
  const SynthCorpus b = GenerateCorpus(sc);
  REQUIRE(a.target_train.size() == 6);
  for (std::size_t i = 0; i < a.target_train.size(); ++i) {
    CHECK(a.target_train[i].features == b.target_train[i].features);
    CHECK(a.target_train[i].transcript == b.target_train[i].transcript);
  }
  CHECK(a.target_arpa == b.target_arpa);
  CHECK(a.source_tokens.size() == 9);
  CHECK(a.target_tokens.size() == 7);

  // Transcripts agree with the word references through the lexicon.
  const Lexicon lex = ParseLexicon(a.target_lexicon, a.target_tokens);
  const NGramLM lm = ParseArpa(a.target_arpa);
  std::set<std::string> ids;
  for (const auto* split : {&a.target_train, &a.dev, &a.test, &a.unsup})
    for (const auto& u : *split) {
      REQUIRE(u.words.has_value());
      CHECK(WordsToPhones(*u.words, lex) == *u.transcript);
      CHECK(u.features.cols() == 40);
      CHECK(u.features.rows() >= 3 * u.transcript->size());
      CHECK(ids.insert(u.id).second);
      for (const auto& w : *u.words) CHECK(lm.WordId(w).has_value());
    }

  sc.seed = 2;
  CHECK(GenerateCorpus(sc).target_train[0].features != a.target_train[0].features);
}

TEST_CASE("corpus files load back through the manifest reader") {
  SynthConfig sc;
  sc.num_phones = 6;
  sc.target_phones = 5;
  sc.source_words = 6;
  sc.target_words = 6;
  sc.source_train = 2;
  sc.target_train = 3;
  sc.dev = 2;
  sc.test = 2;
  sc.unsup = 2;
  sc.lm_sentences = 10;
  sc.utts_per_speaker = 2;
  const SynthCorpus corpus = GenerateCorpus(sc);
  const auto dir = std::filesystem::temp_directory_path() / "lrasr_synth_io";
  std::filesystem::remove_all(dir);
  WriteCorpus(corpus, dir);
  const TokenSet tokens = LoadTokens(dir / "tokens.txt");
  CHECK(tokens == corpus.target_tokens);
  FeatureConfig fc;
  const auto train = LoadUtterances(dir / "train.jsonl", tokens, fc);
  REQUIRE(train.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(train[i].transcript == corpus.target_train[i].transcript);
    CHECK(train[i].words == corpus.target_train[i].words);
    // Stored as float32.
    for (std::size_t k = 0; k < train[i].features.size(); ++k)
      CHECK(train[i].features.data()[k] == static_cast<float>(corpus.target_train[i].features.data()[k]));
  }
  const auto unsup = LoadUtterances(dir / "unsup.jsonl", tokens, fc);
  for (const auto& u : unsup) CHECK_FALSE(u.transcript.has_value());
  CHECK(LoadUtterances(dir / "unsup_reference.jsonl", tokens, fc).front().transcript.has_value());
  CHECK_NOTHROW(LoadArpa((dir / "lm.arpa").string()));
  CHECK_NOTHROW(LoadLexicon((dir / "lexicon.txt").string(), tokens));
}
