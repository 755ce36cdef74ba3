// wordlm.cc

#include "lrasr/wordlm.h"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

namespace lrasr {

namespace {

std::vector<std::string_view> SplitWhitespace(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    std::size_t j = i;
    while (j < line.size() && !std::isspace(static_cast<unsigned char>(line[j]))) ++j;
    if (j > i) out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

std::string_view Trim(std::string_view s) {
  const auto tokens = SplitWhitespace(s);
  if (tokens.empty()) return {};
  const auto* begin = tokens.front().data();
  const auto* end = tokens.back().data() + tokens.back().size();
  return std::string_view(begin, static_cast<std::size_t>(end - begin));
}

std::optional<double> ParseDouble(std::string_view s) {
  double value = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
  return value;
}

std::string FormatDouble(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

std::string ReadTextFile(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

// --- n-gram LM ------------------------------------------------------------

std::optional<int> NGramLM::WordId(std::string_view word) const {
  auto it = ids_.find(std::string(word));
  if (it == ids_.end()) return std::nullopt;
  return it->second;
}

int NGramLM::ResolveWord(std::string_view word) const {
  if (auto id = WordId(word)) return *id;
  if (auto unk = WordId(kUnkWord)) return *unk;
  throw OovError(std::string(word));
}

void NGramLM::AddEntry(const std::vector<std::string>& words, NGramEntry entry) {
  if (words.empty()) throw ParseError("n-gram with no words");
  if (!(entry.log10_prob <= 0.0))
    throw ParseError("n-gram probability must be <= 0 in log10");
  const std::size_t n = words.size();
  if (tables_.size() < n) tables_.resize(n);
  Key key;
  for (std::size_t i = 0; i < n; ++i) {
    auto id = WordId(words[i]);
    if (!id) {
      if (n != 1) throw ParseError("n-gram word '" + words[i] + "' is not a unigram");
      id = static_cast<int>(vocab_.size());
      vocab_.push_back(words[i]);
      ids_.emplace(words[i], *id);
    }
    key.push_back(*id);
  }
  if (!tables_[n - 1].emplace(std::move(key), entry).second) {
    std::string joined;
    for (const auto& w : words) joined += (joined.empty() ? "" : " ") + w;
    throw ParseError("duplicate " + std::to_string(n) + "-gram '" + joined + "'");
  }
}

double NGramLM::Score(const std::vector<int>& history, int word) const {
  const std::size_t max_history = tables_.empty() ? 0 : tables_.size() - 1;
  const std::size_t keep = std::min(history.size(), max_history);
  Key context(history.end() - static_cast<std::ptrdiff_t>(keep), history.end());
  double backoff_sum = 0.0;
  while (true) {
    Key ngram = context;
    ngram.push_back(word);
    const auto& table = tables_[ngram.size() - 1];
    auto it = table.find(ngram);
    if (it != table.end()) return backoff_sum + it->second.log10_prob;
    if (context.empty())
      throw OovError(word >= 0 && static_cast<std::size_t>(word) < vocab_.size()
                         ? vocab_[static_cast<std::size_t>(word)]
                         : "#" + std::to_string(word));
    const auto& ctx_table = tables_[context.size() - 1];
    auto ctx = ctx_table.find(context);
    if (ctx != ctx_table.end() && ctx->second.log10_backoff)
      backoff_sum += *ctx->second.log10_backoff;
    context.erase(context.begin());
  }
}

double NGramLM::Score(const std::vector<std::string>& history, std::string_view word) const {
  std::vector<int> ids;
  for (const auto& h : history) ids.push_back(ResolveWord(h));
  return Score(ids, ResolveWord(word));
}

NGramLM ParseArpa(std::string_view text) {
  enum class State { kPreamble, kData, kSection, kEnd };
  State state = State::kPreamble;
  std::map<int, std::size_t> declared;
  std::map<int, std::size_t> seen;
  int section = 0;
  NGramLM lm;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  auto fail = [&](const std::string& msg) {
    throw ParseError("ARPA line " + std::to_string(line_no) + ": " + msg);
  };
  while (pos <= text.size() && state != State::kEnd) {
    const std::size_t nl = text.find('\n', pos);
    const std::string_view raw =
        text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    const std::string_view line = Trim(raw);
    if (line.empty()) continue;
    if (line == "\\data\\") {
      if (state != State::kPreamble) fail("duplicate \\data\\ section");
      state = State::kData;
      continue;
    }
    if (line == "\\end\\") {
      if (state == State::kPreamble) fail("\\end\\ before \\data\\");
      state = State::kEnd;
      continue;
    }
    if (line.front() == '\\') {
      int n = 0;
      auto [ptr, ec] = std::from_chars(line.data() + 1, line.data() + line.size(), n);
      if (ec != std::errc() || std::string_view(ptr, line.data() + line.size() - ptr) != "-grams:")
        fail("unrecognized section header '" + std::string(line) + "'");
      if (state == State::kPreamble) fail("n-gram section before \\data\\");
      if (!declared.count(n)) fail("section for undeclared order " + std::to_string(n));
      state = State::kSection;
      section = n;
      continue;
    }
    if (state == State::kPreamble) continue;
    if (state == State::kData) {
      if (line.substr(0, 6) != "ngram ") fail("expected 'ngram N=count'");
      const auto rest = line.substr(6);
      const auto eq = rest.find('=');
      if (eq == std::string_view::npos) fail("expected 'ngram N=count'");
      int n = 0;
      std::size_t count = 0;
      const auto lhs = Trim(rest.substr(0, eq));
      const auto rhs = Trim(rest.substr(eq + 1));
      auto r1 = std::from_chars(lhs.data(), lhs.data() + lhs.size(), n);
      auto r2 = std::from_chars(rhs.data(), rhs.data() + rhs.size(), count);
      if (r1.ec != std::errc() || r2.ec != std::errc() || n < 1) fail("bad ngram count line");
      declared[n] = count;
      continue;
    }
    const auto fields = SplitWhitespace(line);
    const std::size_t n = static_cast<std::size_t>(section);
    if (fields.size() != n + 1 && fields.size() != n + 2)
      fail("expected " + std::to_string(n + 1) + " or " + std::to_string(n + 2) + " fields");
    auto prob = ParseDouble(fields[0]);
    if (!prob) fail("bad probability '" + std::string(fields[0]) + "'");
    NGramEntry entry;
    entry.log10_prob = *prob;
    if (fields.size() == n + 2) {
      auto bo = ParseDouble(fields[n + 1]);
      if (!bo) fail("bad backoff weight '" + std::string(fields[n + 1]) + "'");
      entry.log10_backoff = *bo;
    }
    std::vector<std::string> words;
    for (std::size_t i = 1; i <= n; ++i) words.emplace_back(fields[i]);
    try {
      lm.AddEntry(words, entry);
    } catch (const ParseError& e) {
      fail(e.what());
    }
    ++seen[section];
  }
  if (state != State::kEnd) throw ParseError("ARPA: missing \\end\\ marker");
  if (declared.empty()) throw ParseError("ARPA: no n-gram counts declared");
  for (const auto& [n, count] : declared) {
    if (seen[n] != count)
      throw ParseError("ARPA: count mismatch for order " + std::to_string(n) + ": header says " +
                       std::to_string(count) + ", found " + std::to_string(seen[n]));
  }
  if (lm.order() != declared.rbegin()->first) {
    throw ParseError("ARPA: declared order " + std::to_string(declared.rbegin()->first) +
                     " but entries only up to order " + std::to_string(lm.order()));
  }
  return lm;
}

std::string SerializeArpa(const NGramLM& lm) {
  std::string out = "\\data\\\n";
  for (int n = 1; n <= lm.order(); ++n)
    out += "ngram " + std::to_string(n) + "=" + std::to_string(lm.table(n).size()) + "\n";
  const auto& vocab = lm.vocabulary();
  for (int n = 1; n <= lm.order(); ++n) {
    out += "\n\\" + std::to_string(n) + "-grams:\n";
    // Unigrams keep vocabulary order; higher orders follow key order.
    for (const auto& [key, entry] : lm.table(n)) {
      out += FormatDouble(entry.log10_prob);
      for (int id : key) out += "\t" + vocab[static_cast<std::size_t>(id)];
      if (entry.log10_backoff) out += "\t" + FormatDouble(*entry.log10_backoff);
      out += "\n";
    }
  }
  out += "\n\\end\\\n";
  return out;
}

NGramLM LoadArpa(const std::string& path) { return ParseArpa(ReadTextFile(path)); }

// --- lexicon --------------------------------------------------------------

std::optional<int> Lexicon::WordId(std::string_view word) const {
  auto it = ids_.find(std::string(word));
  if (it == ids_.end()) return std::nullopt;
  return it->second;
}

void Lexicon::Add(const std::string& word, const LabelSeq& pronunciation) {
  if (pronunciation.empty()) throw ParseError("empty pronunciation for '" + word + "'");
  auto [it, inserted] = ids_.emplace(word, static_cast<int>(words_.size()));
  if (inserted) {
    words_.push_back(word);
    prons_.emplace_back();
  }
  const int id = it->second;
  auto& prons = prons_[static_cast<std::size_t>(id)];
  if (std::find(prons.begin(), prons.end(), pronunciation) != prons.end()) return;
  prons.push_back(pronunciation);

  int node = kRoot;
  for (int phone : pronunciation) {
    auto child = trie_[static_cast<std::size_t>(node)].children.find(phone);
    if (child == trie_[static_cast<std::size_t>(node)].children.end()) {
      const int fresh = static_cast<int>(trie_.size());
      trie_[static_cast<std::size_t>(node)].children.emplace(phone, fresh);
      trie_.emplace_back();
      node = fresh;
    } else {
      node = child->second;
    }
  }
  auto& terminal = trie_[static_cast<std::size_t>(node)].words;
  if (std::find(terminal.begin(), terminal.end(), id) == terminal.end()) {
    terminal.push_back(id);
    std::sort(terminal.begin(), terminal.end());
  }
}

Lexicon ParseLexicon(std::string_view text, const TokenSet& phones) {
  Lexicon lex;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    const std::size_t nl = text.find('\n', pos);
    const std::string_view line =
        text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() : nl + 1;
    ++line_no;
    const auto fields = SplitWhitespace(line);
    if (fields.empty()) continue;
    const std::string where = "lexicon line " + std::to_string(line_no);
    if (fields.size() == 1)
      throw ParseError(where + ": empty pronunciation for '" + std::string(fields[0]) + "'");
    LabelSeq pron;
    for (std::size_t i = 1; i < fields.size(); ++i) {
      auto id = phones.Find(fields[i]);
      if (!id || *id == phones.blank_index())
        throw ParseError(where + ": phone '" + std::string(fields[i]) + "' not in token set");
      pron.push_back(*id);
    }
    lex.Add(std::string(fields[0]), pron);
  }
  return lex;
}

Lexicon LoadLexicon(const std::string& path, const TokenSet& phones) {
  return ParseLexicon(ReadTextFile(path), phones);
}

LabelSeq WordsToPhones(const std::vector<std::string>& words, const Lexicon& lexicon) {
  LabelSeq out;
  for (const auto& w : words) {
    auto id = lexicon.WordId(w);
    if (!id) throw OovError(w);
    const auto& pron = lexicon.pronunciations(*id).front();
    out.insert(out.end(), pron.begin(), pron.end());
  }
  return out;
}

// --- decoding -------------------------------------------------------------

Matrix PosteriorToLoglik(const Matrix& log_posteriors, double blank_prior, int blank) {
  if (!(blank_prior > 0.0 && blank_prior < 1.0))
    throw std::invalid_argument("PosteriorToLoglik: blank prior must lie in (0, 1)");
  const std::size_t vocab = log_posteriors.cols();
  if (vocab < 2) throw std::invalid_argument("PosteriorToLoglik: need at least one non-blank");
  const double log_blank_prior = std::log(blank_prior);
  const double log_other_prior = std::log((1.0 - blank_prior) / static_cast<double>(vocab - 1));
  Matrix out = log_posteriors;
  for (std::size_t t = 0; t < out.rows(); ++t) {
    auto row = out.row(t);
    for (std::size_t v = 0; v < vocab; ++v)
      row[v] -= static_cast<int>(v) == blank ? log_blank_prior : log_other_prior;
  }
  return out;
}

void DecodeConfig::Validate() const {
  if (beam < 1) throw std::invalid_argument("DecodeConfig: beam must be >= 1");
  if (!(blank_prior > 0.0 && blank_prior < 1.0))
    throw std::invalid_argument("DecodeConfig: blank_prior must lie in (0, 1)");
  if (!(lm_weight >= 0.0)) throw std::invalid_argument("DecodeConfig: lm_weight must be >= 0");
}

namespace {

struct SearchToken {
  int node = Lexicon::kRoot;
  int last = -1;          // last emitted phone, -1 before any
  bool in_blank = false;  // a blank followed `last`
  std::vector<int> context;  // LM history (last order-1 ids)
  std::vector<int> words;    // completed lexicon words
  double score = 0.0;
};

std::vector<int> StateKey(const SearchToken& tok) {
  std::vector<int> key;
  key.reserve(3 + tok.context.size());
  key.push_back(tok.node);
  key.push_back(tok.last);
  key.push_back(tok.in_blank ? 1 : 0);
  key.insert(key.end(), tok.context.begin(), tok.context.end());
  return key;
}

bool Better(const SearchToken& a, const SearchToken& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.words < b.words;
}

struct KeyHash {
  std::size_t operator()(const std::vector<int>& key) const {
    std::size_t h = 14695981039346656037ULL;
    for (int v : key) h = (h ^ static_cast<std::size_t>(v + 2)) * 1099511628211ULL;
    return h;
  }
};

using TokenMap = std::unordered_map<std::vector<int>, SearchToken, KeyHash>;

void Relax(TokenMap* map, SearchToken&& tok) {
  auto key = StateKey(tok);
  auto it = map->find(key);
  if (it == map->end()) {
    map->emplace(std::move(key), std::move(tok));
  } else if (Better(tok, it->second)) {
    it->second = std::move(tok);
  }
}

}  // namespace

WordHypothesis WordBeamDecode(const Matrix& log_posteriors, const Lexicon& lexicon,
                              const NGramLM& lm, const DecodeConfig& cfg, int blank) {
  cfg.Validate();
  if (lexicon.words().empty()) throw std::invalid_argument("WordBeamDecode: empty lexicon");
  if (log_posteriors.rows() == 0) throw std::invalid_argument("WordBeamDecode: zero frames");
  const Matrix loglik = PosteriorToLoglik(log_posteriors, cfg.blank_prior, blank);
  const auto& trie = lexicon.trie();

  std::vector<int> lm_ids;
  for (const auto& w : lexicon.words()) lm_ids.push_back(lm.ResolveWord(w));
  const std::size_t context_len = lm.order() > 0 ? static_cast<std::size_t>(lm.order() - 1) : 0;
  const double lm_scale = cfg.lm_weight * std::log(10.0);
  auto extend_context = [&](std::vector<int> ctx, int lm_word) {
    ctx.push_back(lm_word);
    while (ctx.size() > context_len) ctx.erase(ctx.begin());
    return ctx;
  };

  SearchToken start;
  if (auto bos = lm.WordId(kSentenceStart); bos && context_len > 0) start.context = {*bos};
  std::vector<SearchToken> current{start};

  for (std::size_t t = 0; t < loglik.rows(); ++t) {
    auto frame = loglik.row(t);
    TokenMap next;
    for (const auto& tok : current) {
      {
        SearchToken b = tok;
        b.in_blank = true;
        b.score += frame[static_cast<std::size_t>(blank)];
        Relax(&next, std::move(b));
      }
      if (tok.last >= 0 && !tok.in_blank) {
        SearchToken r = tok;
        r.score += frame[static_cast<std::size_t>(tok.last)];
        Relax(&next, std::move(r));
      }
      for (const auto& [phone, child] : trie[static_cast<std::size_t>(tok.node)].children) {
        if (phone == tok.last && !tok.in_blank) continue;
        const double score = tok.score + frame[static_cast<std::size_t>(phone)];
        const TrieNode& node = trie[static_cast<std::size_t>(child)];
        if (!node.children.empty()) {
          SearchToken a = tok;
          a.node = child;
          a.last = phone;
          a.in_blank = false;
          a.score = score;
          Relax(&next, std::move(a));
        }
        for (int word : node.words) {
          const int lm_word = lm_ids[static_cast<std::size_t>(word)];
          SearchToken e;
          e.node = Lexicon::kRoot;
          e.last = phone;
          e.in_blank = false;
          e.context = extend_context(tok.context, lm_word);
          e.words = tok.words;
          e.words.push_back(word);
          e.score = score + lm_scale * lm.Score(tok.context, lm_word) + cfg.word_insertion_penalty;
          Relax(&next, std::move(e));
        }
      }
    }
    std::vector<std::pair<std::vector<int>, SearchToken>> ranked(next.begin(), next.end());
    auto order = [](const auto& a, const auto& b) {
      if (a.second.score != b.second.score) return a.second.score > b.second.score;
      if (a.second.words != b.second.words) return a.second.words < b.second.words;
      return a.first < b.first;
    };
    if (ranked.size() > cfg.beam) {
      std::partial_sort(ranked.begin(), ranked.begin() + static_cast<std::ptrdiff_t>(cfg.beam),
                        ranked.end(), order);
      ranked.resize(cfg.beam);
    } else {
      std::sort(ranked.begin(), ranked.end(), order);
    }
    current.clear();
    for (auto& [key, tok] : ranked) current.push_back(std::move(tok));
  }

  const auto eos = lm.WordId(kSentenceEnd);
  const SearchToken* best = nullptr;
  double best_score = kLogZero;
  bool best_at_boundary = false;
  for (const auto& tok : current) {
    const bool at_boundary = tok.node == Lexicon::kRoot;
    double score = tok.score;
    if (eos && context_len > 0) score += lm_scale * lm.Score(tok.context, *eos);
    const bool better =
        best == nullptr || (at_boundary && !best_at_boundary) ||
        (at_boundary == best_at_boundary &&
         (score > best_score || (score == best_score && tok.words < best->words)));
    if (better) {
      best = &tok;
      best_score = score;
      best_at_boundary = at_boundary;
    }
  }
  WordHypothesis hyp;
  if (!best) return hyp;
  for (int w : best->words) hyp.words.push_back(lexicon.words()[static_cast<std::size_t>(w)]);
  hyp.log_score = best_score;
  return hyp;
}

}  // namespace lrasr
