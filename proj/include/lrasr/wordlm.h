// lrasr/wordlm.h
//
// Word-level decoding: ARPA back-off n-gram models, pronunciation lexicons
// with a phone prefix trie, posterior-to-likelihood conversion with a blank
// prior, and a token-passing beam search over (trie node, CTC state, LM
// context).

#ifndef LRASR_WORDLM_H_
#define LRASR_WORDLM_H_

#include <cstddef>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "lrasr/core_math.h"
#include "lrasr/ctc.h"

namespace lrasr {

inline constexpr std::string_view kSentenceStart = "<s>";
inline constexpr std::string_view kSentenceEnd = "</s>";
inline constexpr std::string_view kUnkWord = "<unk>";

class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class OovError : public std::runtime_error {
 public:
  explicit OovError(const std::string& word)
      : std::runtime_error("out-of-vocabulary word '" + word + "'"), word_(word) {}
  const std::string& word() const { return word_; }

 private:
  std::string word_;
};

struct NGramEntry {
  double log10_prob = 0.0;
  std::optional<double> log10_backoff;

  friend bool operator==(const NGramEntry&, const NGramEntry&) = default;
};

class NGramLM {
 public:
  using Key = std::vector<int>;

  int order() const { return static_cast<int>(tables_.size()); }
  const std::vector<std::string>& vocabulary() const { return vocab_; }
  std::optional<int> WordId(std::string_view word) const;
  // In-vocabulary id, falling back to <unk>; throws OovError otherwise.
  int ResolveWord(std::string_view word) const;

  // Entries at order n (1-based).
  const std::map<Key, NGramEntry>& table(int n) const { return tables_.at(static_cast<std::size_t>(n - 1)); }

  // Words of an n-gram must already be unigrams, except for unigrams
  // themselves which extend the vocabulary.
  void AddEntry(const std::vector<std::string>& words, NGramEntry entry);

  // log10 P(word | history) with standard back-off; only the last order-1
  // history words are used.
  double Score(const std::vector<int>& history, int word) const;
  double Score(const std::vector<std::string>& history, std::string_view word) const;

  friend bool operator==(const NGramLM& a, const NGramLM& b) {
    return a.vocab_ == b.vocab_ && a.tables_ == b.tables_;
  }

 private:
  std::vector<std::string> vocab_;
  std::unordered_map<std::string, int> ids_;
  std::vector<std::map<Key, NGramEntry>> tables_;
};

NGramLM ParseArpa(std::string_view text);
std::string SerializeArpa(const NGramLM& lm);
NGramLM LoadArpa(const std::string& path);

struct TrieNode {
  std::map<int, int> children;  // phone -> node index
  std::vector<int> words;       // lexicon word ids ending here, ascending
};

class Lexicon {
 public:
  const std::vector<std::string>& words() const { return words_; }
  std::optional<int> WordId(std::string_view word) const;
  const std::vector<LabelSeq>& pronunciations(int word) const {
    return prons_.at(static_cast<std::size_t>(word));
  }
  const std::vector<TrieNode>& trie() const { return trie_; }
  static constexpr int kRoot = 0;

  // Duplicate (word, pronunciation) pairs are ignored.
  void Add(const std::string& word, const LabelSeq& pronunciation);

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, int> ids_;
  std::vector<std::vector<LabelSeq>> prons_;
  std::vector<TrieNode> trie_{TrieNode{}};
};

// "WORD phone phone ..." per line; phones must exist in `phones`.
Lexicon ParseLexicon(std::string_view text, const TokenSet& phones);
Lexicon LoadLexicon(const std::string& path, const TokenSet& phones);

// Concatenation of each word's first listed pronunciation.
LabelSeq WordsToPhones(const std::vector<std::string>& words, const Lexicon& lexicon);

// Scaled likelihoods: log p(v|x) - log prior(v), where the blank prior is
// `blank_prior` and the remaining mass is spread uniformly over non-blanks.
Matrix PosteriorToLoglik(const Matrix& log_posteriors, double blank_prior, int blank);

struct DecodeConfig {
  std::size_t beam = 20;
  double blank_prior = 0.5;
  double lm_weight = 1.0;
  double word_insertion_penalty = 0.0;

  void Validate() const;
};

struct WordHypothesis {
  std::vector<std::string> words;
  double log_score = kLogZero;
};

// Best complete-word sequence. LM scores are converted from log10 to natural
// log and scaled by lm_weight; <s>/</s> are scored when the LM has them.
// Hypotheses that end mid-word lose to any that end on a word boundary and
// otherwise have their partial tail dropped.
WordHypothesis WordBeamDecode(const Matrix& log_posteriors, const Lexicon& lexicon,
                              const NGramLM& lm, const DecodeConfig& cfg, int blank);

}  // namespace lrasr

#endif  // LRASR_WORDLM_H_
