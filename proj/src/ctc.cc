// ctc.cc

#include "lrasr/ctc.h"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace lrasr {

TokenSet::TokenSet(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (tokens_[i].empty()) throw std::invalid_argument("TokenSet: empty token string");
    if (!index_.emplace(tokens_[i], static_cast<int>(i)).second)
      throw std::invalid_argument("TokenSet: duplicate token '" + tokens_[i] + "'");
  }
  auto it = index_.find(std::string(kBlankToken));
  if (it == index_.end()) throw std::invalid_argument("TokenSet: no <blank> token");
  blank_index_ = it->second;
}

TokenSet TokenSet::WithBlank(const std::vector<std::string>& tokens) {
  std::vector<std::string> all{std::string(kBlankToken)};
  all.insert(all.end(), tokens.begin(), tokens.end());
  return TokenSet(std::move(all));
}

std::optional<int> TokenSet::Find(std::string_view token) const {
  auto it = index_.find(std::string(token));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

int TokenSet::IndexOf(std::string_view token) const {
  auto found = Find(token);
  if (!found) throw std::invalid_argument("unknown token '" + std::string(token) + "'");
  return *found;
}

LabelSeq TokenSet::Encode(std::string_view text) const {
  LabelSeq out;
  std::istringstream in{std::string(text)};
  std::string tok;
  while (in >> tok) {
    const int id = IndexOf(tok);
    if (id == blank_index_) throw std::invalid_argument("transcript contains <blank>");
    out.push_back(id);
  }
  return out;
}

std::string TokenSet::Decode(const LabelSeq& label) const {
  std::string out;
  for (std::size_t i = 0; i < label.size(); ++i) {
    if (i) out += ' ';
    out += token(label[i]);
  }
  return out;
}

LabelSeq Collapse(const LabelSeq& path, int blank) {
  LabelSeq out;
  int prev = -1;
  for (int sym : path) {
    if (sym != prev && sym != blank) out.push_back(sym);
    prev = sym;
  }
  return out;
}

std::size_t CtcRequiredFrames(const LabelSeq& label) {
  std::size_t frames = label.size();
  for (std::size_t i = 1; i < label.size(); ++i)
    if (label[i] == label[i - 1]) ++frames;
  return frames;
}

CtcResult CtcLoss(const Matrix& log_posteriors, const LabelSeq& label, int blank) {
  const std::size_t num_frames = log_posteriors.rows();
  const std::size_t vocab = log_posteriors.cols();
  if (num_frames == 0) throw std::invalid_argument("CtcLoss: zero frames");
  for (int sym : label)
    if (sym < 0 || static_cast<std::size_t>(sym) >= vocab || sym == blank)
      throw std::invalid_argument("CtcLoss: label index " + std::to_string(sym) +
                                  " invalid for vocabulary of " + std::to_string(vocab));
  if (CtcRequiredFrames(label) > num_frames) return CtcResult{};

  // Blank-augmented label: -, l1, -, l2, ..., lL, -
  const std::size_t ext_len = 2 * label.size() + 1;
  std::vector<int> ext(ext_len, blank);
  for (std::size_t i = 0; i < label.size(); ++i) ext[2 * i + 1] = label[i];
  auto can_skip = [&](std::size_t s) {
    return s >= 2 && ext[s] != blank && ext[s] != ext[s - 2];
  };

  // alpha includes the emission at t, beta excludes it.
  Matrix alpha(num_frames, ext_len, kLogZero);
  Matrix beta(num_frames, ext_len, kLogZero);
  alpha(0, 0) = log_posteriors(0, ext[0]);
  if (ext_len > 1) alpha(0, 1) = log_posteriors(0, ext[1]);
  for (std::size_t t = 1; t < num_frames; ++t) {
    for (std::size_t s = 0; s < ext_len; ++s) {
      double acc = alpha(t - 1, s);
      if (s >= 1) acc = LogSumExp(acc, alpha(t - 1, s - 1));
      if (can_skip(s)) acc = LogSumExp(acc, alpha(t - 1, s - 2));
      alpha(t, s) = acc == kLogZero ? kLogZero : acc + log_posteriors(t, ext[s]);
    }
  }
  double log_likelihood = alpha(num_frames - 1, ext_len - 1);
  if (ext_len > 1) log_likelihood = LogSumExp(log_likelihood, alpha(num_frames - 1, ext_len - 2));
  if (log_likelihood == kLogZero) return CtcResult{};

  beta(num_frames - 1, ext_len - 1) = 0.0;
  if (ext_len > 1) beta(num_frames - 1, ext_len - 2) = 0.0;
  for (std::size_t t = num_frames - 1; t-- > 0;) {
    for (std::size_t s = 0; s < ext_len; ++s) {
      double acc = beta(t + 1, s) + log_posteriors(t + 1, ext[s]);
      if (s + 1 < ext_len)
        acc = LogSumExp(acc, beta(t + 1, s + 1) + log_posteriors(t + 1, ext[s + 1]));
      if (s + 2 < ext_len && can_skip(s + 2))
        acc = LogSumExp(acc, beta(t + 1, s + 2) + log_posteriors(t + 1, ext[s + 2]));
      beta(t, s) = acc;
    }
  }

  CtcResult result;
  result.loss = -log_likelihood;
  result.grad = Matrix(num_frames, vocab);
  std::vector<double> occupancy(vocab);
  for (std::size_t t = 0; t < num_frames; ++t) {
    std::fill(occupancy.begin(), occupancy.end(), kLogZero);
    for (std::size_t s = 0; s < ext_len; ++s) {
      const double joint = alpha(t, s) + beta(t, s);
      if (joint != kLogZero) occupancy[ext[s]] = LogSumExp(occupancy[ext[s]], joint);
    }
    for (std::size_t v = 0; v < vocab; ++v) {
      const double post = std::exp(log_posteriors(t, v));
      const double occ = occupancy[v] == kLogZero ? 0.0 : std::exp(occupancy[v] - log_likelihood);
      result.grad(t, v) = post - occ;
    }
  }
  return result;
}

Hypothesis GreedyDecode(const Matrix& log_posteriors, int blank) {
  LabelSeq path;
  path.reserve(log_posteriors.rows());
  Hypothesis hyp;
  for (std::size_t t = 0; t < log_posteriors.rows(); ++t) {
    auto row = log_posteriors.row(t);
    std::size_t best = 0;
    for (std::size_t v = 1; v < row.size(); ++v)
      if (row[v] > row[best]) best = v;
    path.push_back(static_cast<int>(best));
    hyp.log_prob += row[best];
  }
  hyp.tokens = Collapse(path, blank);
  return hyp;
}

namespace {

struct PrefixHash {
  std::size_t operator()(const LabelSeq& seq) const {
    std::size_t h = 14695981039346656037ULL;
    for (int v : seq) h = (h ^ static_cast<std::size_t>(v + 1)) * 1099511628211ULL;
    return h;
  }
};

struct PrefixMass {
  double blank = kLogZero;     // ends in blank
  double non_blank = kLogZero; // ends in the last label symbol
  double total() const { return LogSumExp(blank, non_blank); }
};

using Beam = std::vector<std::pair<LabelSeq, PrefixMass>>;

bool RanksBefore(const std::pair<LabelSeq, PrefixMass>& a,
                 const std::pair<LabelSeq, PrefixMass>& b) {
  const double sa = a.second.total();
  const double sb = b.second.total();
  if (sa != sb) return sa > sb;
  return a.first < b.first;
}

void Prune(Beam* beam, std::size_t width) {
  if (beam->size() > width) {
    std::partial_sort(beam->begin(), beam->begin() + static_cast<std::ptrdiff_t>(width),
                      beam->end(), RanksBefore);
    beam->resize(width);
  } else {
    std::sort(beam->begin(), beam->end(), RanksBefore);
  }
}

}  // namespace

std::vector<Hypothesis> PrefixBeamDecode(const Matrix& log_posteriors, std::size_t beam,
                                         int blank) {
  if (beam == 0) throw std::invalid_argument("PrefixBeamDecode: beam must be >= 1");
  const std::size_t vocab = log_posteriors.cols();
  Beam current{{LabelSeq{}, PrefixMass{0.0, kLogZero}}};

  for (std::size_t t = 0; t < log_posteriors.rows(); ++t) {
    auto frame = log_posteriors.row(t);
    std::unordered_map<LabelSeq, PrefixMass, PrefixHash> next;
    next.reserve(current.size() * vocab);
    for (const auto& [prefix, mass] : current) {
      const double total = mass.total();
      auto& same = next[prefix];
      same.blank = LogSumExp(same.blank, total + frame[static_cast<std::size_t>(blank)]);
      const int last = prefix.empty() ? -1 : prefix.back();
      for (std::size_t v = 0; v < vocab; ++v) {
        const int sym = static_cast<int>(v);
        if (sym == blank) continue;
        const double lp = frame[v];
        LabelSeq extended = prefix;
        extended.push_back(sym);
        if (sym == last) {
          // Repeat without an intervening blank stays on the same prefix.
          auto& stay = next[prefix];
          stay.non_blank = LogSumExp(stay.non_blank, mass.non_blank + lp);
          auto& grow = next[extended];
          grow.non_blank = LogSumExp(grow.non_blank, mass.blank + lp);
        } else {
          auto& grow = next[extended];
          grow.non_blank = LogSumExp(grow.non_blank, total + lp);
        }
      }
    }
    current.clear();
    for (auto& entry : next)
      if (entry.second.total() != kLogZero) current.push_back(std::move(entry));
    // Only possible when a whole frame has zero probability.
    if (current.empty()) current.assign(next.begin(), next.end());
    Prune(&current, beam);
  }

  Prune(&current, beam);
  std::vector<Hypothesis> out;
  out.reserve(current.size());
  for (auto& [prefix, mass] : current) out.push_back(Hypothesis{prefix, mass.total()});
  return out;
}

}  // namespace lrasr
