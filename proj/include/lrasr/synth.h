// lrasr/synth.h
//
// Synthetic two-domain phone corpus. Each phone is a pair of Gaussian bumps
// over the mel channels that drifts from an onset to an offset shape; words
// are short phone strings and sentences follow a sparse bigram grammar.
// The target domain sees a subset of the phones through a contrast change,
// heavier noise and an optional channel shift, with its own word inventory. Speakers
// differ in speaking rate, gain and an additive channel offset.

#ifndef LRASR_SYNTH_H_
#define LRASR_SYNTH_H_

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "lrasr/ctc.h"
#include "lrasr/features.h"
#include "lrasr/wordlm.h"

namespace lrasr {

struct SynthConfig {
  std::uint64_t seed = 1;
  int mel_bins = 40;
  int num_phones = 32;
  int target_phones = 24;  // the first N acoustic phones, renamed
  int source_words = 80;
  int target_words = 60;
  int successors = 4;  // grammar fan-out per word
  int min_words = 3;
  int max_words = 8;

  int source_train = 600;
  int source_dev = 48;
  int target_train = 48;
  int dev = 48;
  int test = 48;
  int unsup = 384;
  int lm_sentences = 2000;
  int utts_per_speaker = 12;

  double mean_phone_frames = 7.0;
  double duration_jitter = 0.15;  // relative, uniform
  // Target train speakers vary less than everyone else (dev, test, unsup and
  // the large source corpus); only the latter ever have a notch.
  double train_rate_spread = 0.03;  // rate in 1 +- spread
  double test_rate_spread = 0.35;
  double source_noise = 0.35;
  double target_noise = 0.6;
  int target_channel_shift = 0;  // mel channels
  double target_contrast = 0.7;
  double pause_prob = 0.3;
  double speaker_warp = 0.5;  // per-speaker spectral shift, channels
  // Some recording channels lose a band of mel channels entirely.
  double train_notch_prob = 0.0;
  double test_notch_prob = 0.5;
  int notch_width_max = 6;
  double notch_gain = 0.05;

  void Validate() const;
};

struct SynthCorpus {
  TokenSet source_tokens;
  TokenSet target_tokens;
  std::string source_lexicon;  // lexicon text, "word p1 p2 ..."
  std::string target_lexicon;
  std::string target_arpa;  // bigram estimated on a disjoint text sample

  // Raw (unnormalized) features with phone transcripts and word references.
  std::vector<Utterance> source_train;
  std::vector<Utterance> source_dev;
  std::vector<Utterance> target_train;
  std::vector<Utterance> dev;
  std::vector<Utterance> test;
  std::vector<Utterance> unsup;  // transcripts kept as held-out truth
};

SynthCorpus GenerateCorpus(const SynthConfig& cfg);

// Bigram with absolute discounting, backed off to an add-one unigram over
// `vocabulary`. Sentences are word lists without <s>/</s>.
NGramLM EstimateBigram(const std::vector<std::vector<std::string>>& sentences,
                       const std::vector<std::string>& vocabulary, double discount = 0.5);

// One token per line.
void WriteTokens(const std::filesystem::path& path, const TokenSet& tokens);
TokenSet LoadTokens(const std::filesystem::path& path);

// Writes features/, manifests (<split>.jsonl), tokens, lexicons and the LM.
// unsup.jsonl carries no transcripts; they go to unsup_reference.jsonl.
void WriteCorpus(const SynthCorpus& corpus, const std::filesystem::path& dir);

}  // namespace lrasr

#endif  // LRASR_SYNTH_H_
