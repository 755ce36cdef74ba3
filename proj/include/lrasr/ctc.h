// lrasr/ctc.h
//
// Token inventories, the CTC loss with its analytic gradient, and the two
// label-level decoders (greedy and prefix beam search).

#ifndef LRASR_CTC_H_
#define LRASR_CTC_H_

#include <cstddef>
#include <limits>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "lrasr/core_math.h"

namespace lrasr {

inline constexpr std::string_view kBlankToken = "<blank>";
inline constexpr std::size_t kUnboundedBeam = std::numeric_limits<std::size_t>::max();

using LabelSeq = std::vector<int>;

class TokenSet {
 public:
  TokenSet() = default;
  // `tokens` must contain "<blank>" exactly once and no duplicates.
  explicit TokenSet(std::vector<std::string> tokens);

  // Builds {<blank>, tokens...}, putting blank at index 0.
  static TokenSet WithBlank(const std::vector<std::string>& tokens);

  std::size_t size() const { return tokens_.size(); }
  int blank_index() const { return blank_index_; }
  const std::string& token(int index) const { return tokens_.at(static_cast<std::size_t>(index)); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  std::optional<int> Find(std::string_view token) const;
  int IndexOf(std::string_view token) const;  // throws on unknown token

  // Space-separated token strings <-> index sequence.
  LabelSeq Encode(std::string_view text) const;
  std::string Decode(const LabelSeq& label) const;

  friend bool operator==(const TokenSet& a, const TokenSet& b) { return a.tokens_ == b.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
  int blank_index_ = -1;
};

struct Hypothesis {
  LabelSeq tokens;  // blank-free
  double log_prob = 0.0;
};

// Merges adjacent repeats, then deletes blanks.
LabelSeq Collapse(const LabelSeq& path, int blank);

// Minimum number of frames a CTC alignment of `label` needs.
std::size_t CtcRequiredFrames(const LabelSeq& label);

struct CtcResult {
  double loss = std::numeric_limits<double>::infinity();
  Matrix grad;  // d loss / d logits; empty when infeasible

  bool feasible() const { return loss != std::numeric_limits<double>::infinity(); }
};

// Negative log-likelihood of `label` under per-frame log-posteriors
// (T x V, rows already log-normalized). The gradient is taken with respect to
// the pre-softmax logits: softmax - occupancy. Labels that cannot be aligned
// in T frames return an infeasible result with no gradient.
CtcResult CtcLoss(const Matrix& log_posteriors, const LabelSeq& label, int blank);

// Per-frame argmax (ties to the lower index), collapsed.
Hypothesis GreedyDecode(const Matrix& log_posteriors, int blank);

// CTC prefix beam search. Returns up to `beam` distinct labels ranked by
// total log-mass; equal scores rank the lexicographically smaller label first.
std::vector<Hypothesis> PrefixBeamDecode(const Matrix& log_posteriors, std::size_t beam,
                                         int blank);

}  // namespace lrasr

#endif  // LRASR_CTC_H_
