// synth.cc

#include "lrasr/synth.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <stdexcept>

namespace lrasr {

namespace {

struct PhoneShape {
  std::vector<double> onset;
  std::vector<double> offset;
  double duration_scale = 1.0;
};

struct Speaker {
  std::string name;
  double rate = 1.0;
  double gain = 1.0;
  double warp = 0.0;
  std::size_t notch_start = 0;
  std::size_t notch_width = 0;
  std::vector<double> offset;
};

struct Domain {
  int channel_shift = 0;
  double contrast = 1.0;
  double noise = 0.0;
};

// Words index into a phone list; the grammar is a sparse bigram chain.
struct Language {
  std::vector<std::string> words;
  std::vector<std::vector<int>> prons;  // acoustic phone ids
  std::vector<std::vector<int>> successors;
  std::vector<std::vector<double>> successor_cdf;
  std::vector<int> starts;
  std::vector<double> start_cdf;
};

std::string Numbered(const char* prefix, int i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s%02d", prefix, i);
  return buf;
}

std::vector<double> Bumps(int bins, double a1, double c1, double w1, double a2, double c2, double w2) {
  std::vector<double> v(static_cast<std::size_t>(bins));
  for (int c = 0; c < bins; ++c) {
    const double d1 = (c - c1) / w1, d2 = (c - c2) / w2;
    v[static_cast<std::size_t>(c)] = a1 * std::exp(-0.5 * d1 * d1) + a2 * std::exp(-0.5 * d2 * d2);
  }
  return v;
}

std::vector<PhoneShape> MakePhones(const SynthConfig& cfg, Rng& rng) {
  std::vector<PhoneShape> phones;
  const double hi = cfg.mel_bins - 2;
  for (int p = 0; p < cfg.num_phones; ++p) {
    const double a1 = rng.Uniform(1.5, 3.0), c1 = rng.Uniform(1.0, hi), w1 = rng.Uniform(1.2, 2.5);
    const double a2 = rng.Uniform(1.0, 2.5), c2 = rng.Uniform(1.0, hi), w2 = rng.Uniform(1.2, 2.5);
    const double drift = rng.Uniform(-4.0, 4.0);
    PhoneShape s;
    s.onset = Bumps(cfg.mel_bins, a1, c1, w1, a2, c2, w2);
    s.offset = Bumps(cfg.mel_bins, a1, c1, w1, a2, std::clamp(c2 + drift, 0.0, hi + 1), w2);
    s.duration_scale = rng.Uniform(0.75, 1.25);
    phones.push_back(std::move(s));
  }
  return phones;
}

std::vector<double> ZipfCdf(std::size_t n) {
  std::vector<double> cdf(n);
  double total = 0;
  for (std::size_t k = 0; k < n; ++k) total += 1.0 / static_cast<double>(k + 1);
  double acc = 0;
  for (std::size_t k = 0; k < n; ++k) {
    acc += 1.0 / static_cast<double>(k + 1) / total;
    cdf[k] = acc;
  }
  cdf.back() = 1.0;
  return cdf;
}

std::size_t SampleCdf(const std::vector<double>& cdf, Rng& rng) {
  const double u = rng.Uniform();
  return static_cast<std::size_t>(std::upper_bound(cdf.begin(), cdf.end(), u) - cdf.begin());
}

Language MakeLanguage(const char* prefix, int num_words, int num_phones, int fanout, Rng& rng) {
  Language lang;
  std::set<std::vector<int>> used;
  while (static_cast<int>(lang.words.size()) < num_words) {
    const int len = static_cast<int>(rng.UniformInt(2, 4));
    std::vector<int> pron;
    for (int i = 0; i < len; ++i) pron.push_back(static_cast<int>(rng.UniformInt(0, num_phones - 1)));
    if (!used.insert(pron).second) continue;
    lang.words.push_back(Numbered(prefix, static_cast<int>(lang.words.size())));
    lang.prons.push_back(std::move(pron));
  }
  const auto n = static_cast<std::size_t>(num_words);
  const std::size_t k = std::min<std::size_t>(static_cast<std::size_t>(fanout), n);
  std::vector<int> all(n);
  for (std::size_t i = 0; i < n; ++i) all[i] = static_cast<int>(i);
  for (std::size_t w = 0; w < n; ++w) {
    rng.Shuffle(&all);
    lang.successors.emplace_back(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k));
    lang.successor_cdf.push_back(ZipfCdf(k));
  }
  rng.Shuffle(&all);
  lang.starts = all;
  lang.start_cdf = ZipfCdf(n);
  return lang;
}

std::vector<int> SampleSentence(const Language& lang, const SynthConfig& cfg, Rng& rng) {
  const int len = static_cast<int>(rng.UniformInt(cfg.min_words, cfg.max_words));
  std::vector<int> s{lang.starts[SampleCdf(lang.start_cdf, rng)]};
  while (static_cast<int>(s.size()) < len) {
    const auto w = static_cast<std::size_t>(s.back());
    s.push_back(lang.successors[w][SampleCdf(lang.successor_cdf[w], rng)]);
  }
  return s;
}

struct Variability {
  double rate_spread = 0.0;
  double notch_prob = 0.0;
};

Speaker MakeSpeaker(const std::string& name, const Variability& var, const SynthConfig& cfg, Rng& rng) {
  const int bins = cfg.mel_bins;
  Speaker sp;
  sp.name = name;
  sp.rate = 1.0 + rng.Uniform(-var.rate_spread, var.rate_spread);
  sp.gain = rng.Uniform(0.85, 1.15);
  sp.warp = rng.Uniform(-cfg.speaker_warp, cfg.speaker_warp);
  if (cfg.notch_width_max > 0 && rng.Bernoulli(var.notch_prob)) {
    sp.notch_width = static_cast<std::size_t>(rng.UniformInt(2, std::max(2, cfg.notch_width_max)));
    sp.notch_start = static_cast<std::size_t>(rng.UniformInt(0, bins - static_cast<int>(sp.notch_width)));
  }
  const double level = rng.Uniform(-1.0, 1.0), tilt = rng.Uniform(-1.0, 1.0);
  const double ripple = rng.Uniform(-0.3, 0.3), phase = rng.Uniform(0.0, 6.283185307179586);
  for (int c = 0; c < bins; ++c) {
    const double x = static_cast<double>(c) / bins;
    sp.offset.push_back(level + tilt * x + ripple * std::sin(6.283185307179586 * 2 * x + phase));
  }
  return sp;
}

Matrix Render(const std::vector<int>& words, const Language& lang, const std::vector<PhoneShape>& phones,
              const Speaker& sp, const Domain& dom, const SynthConfig& cfg, Rng& rng) {
  const auto bins = static_cast<std::size_t>(cfg.mel_bins);
  std::vector<std::vector<double>> frames;
  const std::vector<double> silence(bins, 0.0);
  auto pause = [&](int lo, int hi) {
    const auto n = rng.UniformInt(lo, hi);
    for (std::int64_t i = 0; i < n; ++i) frames.push_back(silence);
  };

  pause(4, 8);
  for (std::size_t wi = 0; wi < words.size(); ++wi) {
    if (wi > 0 && rng.Bernoulli(cfg.pause_prob)) pause(2, 5);
    for (int p : lang.prons[static_cast<std::size_t>(words[wi])]) {
      const PhoneShape& shape = phones[static_cast<std::size_t>(p)];
      const double jitter = rng.Uniform(1.0 - cfg.duration_jitter, 1.0 + cfg.duration_jitter);
      const int n = std::max(3, static_cast<int>(std::lround(cfg.mean_phone_frames * shape.duration_scale *
                                                             sp.rate * jitter)));
      for (int f = 0; f < n; ++f) {
        const double alpha = (f + 0.5) / n;
        std::vector<double> v(bins);
        for (std::size_t c = 0; c < bins; ++c) v[c] = (1 - alpha) * shape.onset[c] + alpha * shape.offset[c];
        frames.push_back(std::move(v));
      }
    }
  }
  pause(4, 8);

  // Coarticulation: neighbouring frames bleed into each other.
  const std::size_t T = frames.size();
  Matrix out(T, bins);
  for (std::size_t t = 0; t < T; ++t) {
    const auto& prev = frames[t == 0 ? 0 : t - 1];
    const auto& next = frames[t + 1 == T ? t : t + 1];
    for (std::size_t c = 0; c < bins; ++c) {
      out(t, c) = 0.25 * prev[c] + 0.5 * frames[t][c] + 0.25 * next[c];
    }
  }
  // Speaker warp and domain channel shift (linear interpolation between
  // channels), channel notch, contrast, gain, speaker offset and noise.
  Matrix shifted(T, bins);
  const double last = static_cast<double>(bins - 1);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t c = 0; c < bins; ++c) {
      const double pos = std::clamp(static_cast<double>(c) - dom.channel_shift - sp.warp, 0.0, last);
      const auto lo = static_cast<std::size_t>(pos);
      const std::size_t hi = std::min(lo + 1, bins - 1);
      const double frac = pos - static_cast<double>(lo);
      double v = (1 - frac) * out(t, lo) + frac * out(t, hi);
      if (c >= sp.notch_start && c < sp.notch_start + sp.notch_width) v *= cfg.notch_gain;
      shifted(t, c) = dom.contrast * sp.gain * v + sp.offset[c] + dom.noise * rng.Normal();
    }
  return shifted;
}

std::vector<Utterance> MakeSplit(const std::string& split, int count, const Variability& var, const Language& lang,
                                 const std::vector<int>& phone_to_token, const std::vector<PhoneShape>& phones,
                                 const Domain& dom, const SynthConfig& cfg, bool supervised) {
  std::vector<Utterance> out;
  Rng rng(DeriveSeed(cfg.seed, "split:" + split));
  Speaker sp;
  for (int i = 0; i < count; ++i) {
    if (i % cfg.utts_per_speaker == 0)
      sp = MakeSpeaker(split + "_spk" + std::to_string(i / cfg.utts_per_speaker), var, cfg, rng);
    const std::vector<int> sentence = SampleSentence(lang, cfg, rng);
    Utterance u;
    char id[64];
    std::snprintf(id, sizeof id, "%s_%04d", split.c_str(), i);
    u.id = id;
    u.speaker = sp.name;
    u.features = Render(sentence, lang, phones, sp, dom, cfg, rng);
    LabelSeq label;
    std::vector<std::string> words;
    for (int w : sentence) {
      words.push_back(lang.words[static_cast<std::size_t>(w)]);
      for (int p : lang.prons[static_cast<std::size_t>(w)]) label.push_back(phone_to_token[static_cast<std::size_t>(p)]);
    }
    u.transcript = std::move(label);
    u.words = std::move(words);
    u.is_supervised = supervised;
    out.push_back(std::move(u));
  }
  return out;
}

std::string LexiconText(const Language& lang, const TokenSet& tokens, const std::vector<int>& phone_to_token) {
  std::string text;
  for (std::size_t w = 0; w < lang.words.size(); ++w) {
    text += lang.words[w];
    for (int p : lang.prons[w]) text += " " + tokens.token(phone_to_token[static_cast<std::size_t>(p)]);
    text += "\n";
  }
  return text;
}

}  // namespace

void SynthConfig::Validate() const {
  if (mel_bins < 4) throw std::invalid_argument("synth: mel_bins must be >= 4");
  if (num_phones < 2 || target_phones < 2 || target_phones > num_phones)
    throw std::invalid_argument("synth: need 2 <= target_phones <= num_phones");
  if (source_words < 1 || target_words < 1 || successors < 1)
    throw std::invalid_argument("synth: word inventories and grammar fan-out must be >= 1");
  if (min_words < 1 || max_words < min_words) throw std::invalid_argument("synth: bad sentence length range");
  if (utts_per_speaker < 1) throw std::invalid_argument("synth: utts_per_speaker must be >= 1");
  for (int n : {source_train, source_dev, target_train, dev, test, unsup, lm_sentences})
    if (n < 0) throw std::invalid_argument("synth: split sizes must be >= 0");
  if (!(mean_phone_frames >= 3)) throw std::invalid_argument("synth: mean_phone_frames must be >= 3");
  if (!(duration_jitter >= 0 && duration_jitter < 1)) throw std::invalid_argument("synth: duration_jitter must lie in [0, 1)");
  if (!(train_rate_spread >= 0 && train_rate_spread < 1 && test_rate_spread >= 0 && test_rate_spread < 1))
    throw std::invalid_argument("synth: rate spreads must lie in [0, 1)");
  if (!(source_noise >= 0 && target_noise >= 0)) throw std::invalid_argument("synth: noise must be >= 0");
  if (!(train_notch_prob >= 0 && train_notch_prob <= 1 && test_notch_prob >= 0 && test_notch_prob <= 1))
    throw std::invalid_argument("synth: notch probabilities must lie in [0, 1]");
  // Every word needs a distinct pronunciation of 2-4 phones.
  const double target_prons = std::pow(target_phones, 2) + std::pow(target_phones, 3) + std::pow(target_phones, 4);
  if (target_words > target_prons) throw std::invalid_argument("synth: too many target words for the phone set");
}

SynthCorpus GenerateCorpus(const SynthConfig& cfg) {
  cfg.Validate();
  Rng phone_rng(DeriveSeed(cfg.seed, "phones"));
  const std::vector<PhoneShape> phones = MakePhones(cfg, phone_rng);

  SynthCorpus corpus;
  std::vector<std::string> source_names, target_names;
  for (int p = 0; p < cfg.num_phones; ++p) source_names.push_back(Numbered("S", p));
  for (int p = 0; p < cfg.target_phones; ++p) target_names.push_back(Numbered("p", p));
  corpus.source_tokens = TokenSet::WithBlank(source_names);
  corpus.target_tokens = TokenSet::WithBlank(target_names);
  std::vector<int> source_map, target_map;
  for (int p = 0; p < cfg.num_phones; ++p) source_map.push_back(corpus.source_tokens.IndexOf(source_names[static_cast<std::size_t>(p)]));
  for (int p = 0; p < cfg.target_phones; ++p) target_map.push_back(corpus.target_tokens.IndexOf(target_names[static_cast<std::size_t>(p)]));

  Rng lang_rng(DeriveSeed(cfg.seed, "languages"));
  const Language source = MakeLanguage("u", cfg.source_words, cfg.num_phones, cfg.successors, lang_rng);
  const Language target = MakeLanguage("w", cfg.target_words, cfg.target_phones, cfg.successors, lang_rng);
  corpus.source_lexicon = LexiconText(source, corpus.source_tokens, source_map);
  corpus.target_lexicon = LexiconText(target, corpus.target_tokens, target_map);

  Rng text_rng(DeriveSeed(cfg.seed, "lm-text"));
  std::vector<std::vector<std::string>> text;
  for (int i = 0; i < cfg.lm_sentences; ++i) {
    std::vector<std::string> s;
    for (int w : SampleSentence(target, cfg, text_rng)) s.push_back(target.words[static_cast<std::size_t>(w)]);
    text.push_back(std::move(s));
  }
  corpus.target_arpa = SerializeArpa(EstimateBigram(text, target.words));

  const Domain src_dom{0, 1.0, cfg.source_noise};
  const Domain tgt_dom{cfg.target_channel_shift, cfg.target_contrast, cfg.target_noise};
  const Variability narrow{cfg.train_rate_spread, cfg.train_notch_prob};
  const Variability wide{cfg.test_rate_spread, cfg.test_notch_prob};
  corpus.source_train = MakeSplit("src", cfg.source_train, wide, source, source_map, phones, src_dom, cfg, true);
  corpus.source_dev = MakeSplit("srcdev", cfg.source_dev, wide, source, source_map, phones, src_dom, cfg, true);
  corpus.target_train = MakeSplit("train", cfg.target_train, narrow, target, target_map, phones, tgt_dom, cfg, true);
  corpus.dev = MakeSplit("dev", cfg.dev, wide, target, target_map, phones, tgt_dom, cfg, true);
  corpus.test = MakeSplit("test", cfg.test, wide, target, target_map, phones, tgt_dom, cfg, true);
  corpus.unsup = MakeSplit("unsup", cfg.unsup, wide, target, target_map, phones, tgt_dom, cfg, false);
  return corpus;
}

NGramLM EstimateBigram(const std::vector<std::vector<std::string>>& sentences,
                       const std::vector<std::string>& vocabulary, double discount) {
  if (!(discount > 0 && discount < 1)) throw std::invalid_argument("EstimateBigram: discount must lie in (0, 1)");
  const std::string bos(kSentenceStart), eos(kSentenceEnd);
  std::map<std::string, double> unigram;
  std::map<std::string, std::map<std::string, double>> bigram;
  for (const auto& w : vocabulary) unigram[w] = 0;
  unigram[eos] = 0;
  double total = 0;
  for (const auto& s : sentences) {
    std::string prev = bos;
    std::vector<std::string> words = s;
    words.push_back(eos);
    for (const auto& w : words) {
      auto it = unigram.find(w);
      if (it == unigram.end()) throw std::invalid_argument("EstimateBigram: word '" + w + "' not in vocabulary");
      it->second += 1;
      total += 1;
      bigram[prev][w] += 1;
      prev = w;
    }
  }
  const double v = static_cast<double>(unigram.size());
  std::map<std::string, double> p_uni;
  for (const auto& [w, c] : unigram) p_uni[w] = (c + 1) / (total + v);

  std::map<std::string, double> backoff;
  for (const auto& [h, succ] : bigram) {
    double c_h = 0, seen_uni = 0;
    for (const auto& [w, c] : succ) {
      c_h += c;
      seen_uni += p_uni[w];
    }
    const double left = discount * static_cast<double>(succ.size()) / c_h;
    backoff[h] = left / (1.0 - seen_uni);
  }

  NGramLM lm;
  lm.AddEntry({bos}, {-99.0, std::log10(backoff.count(bos) ? backoff[bos] : 1.0)});
  for (const auto& w : vocabulary)
    lm.AddEntry({w}, {std::log10(p_uni[w]), std::log10(backoff.count(w) ? backoff[w] : 1.0)});
  lm.AddEntry({eos}, {std::log10(p_uni[eos]), std::nullopt});
  for (const auto& [h, succ] : bigram) {
    double c_h = 0;
    for (const auto& [w, c] : succ) c_h += c;
    for (const auto& [w, c] : succ) lm.AddEntry({h, w}, {std::log10((c - discount) / c_h), std::nullopt});
  }
  return lm;
}

void WriteTokens(const std::filesystem::path& path, const TokenSet& tokens) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& t : tokens.tokens()) out << t << "\n";
}

TokenSet LoadTokens(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open token list " + path.string());
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
    if (!line.empty()) tokens.push_back(line);
  }
  return TokenSet(std::move(tokens));
}

void WriteCorpus(const SynthCorpus& corpus, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "features");
  auto write_text = [&](const char* name, const std::string& text) {
    std::ofstream out(dir / name, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + (dir / name).string());
    out << text;
  };
  auto write_split = [&](const std::string& name, const std::vector<Utterance>& utts, const TokenSet& tokens,
                         bool with_transcripts) {
    std::vector<ManifestEntry> entries;
    for (const auto& u : utts) {
      const std::string rel = "features/" + u.id + ".lfbe";
      WriteFeatureFile(dir / rel, u.features);
      ManifestEntry e;
      e.id = u.id;
      e.speaker = u.speaker;
      e.features_path = rel;
      if (with_transcripts && u.transcript) e.transcript = tokens.Decode(*u.transcript);
      if (with_transcripts && u.words) {
        std::string joined;
        for (const auto& w : *u.words) joined += (joined.empty() ? "" : " ") + w;
        e.words = joined;
      }
      entries.push_back(std::move(e));
    }
    WriteManifest(dir / (name + ".jsonl"), entries);
  };
  write_split("source_train", corpus.source_train, corpus.source_tokens, true);
  write_split("source_dev", corpus.source_dev, corpus.source_tokens, true);
  write_split("train", corpus.target_train, corpus.target_tokens, true);
  write_split("dev", corpus.dev, corpus.target_tokens, true);
  write_split("test", corpus.test, corpus.target_tokens, true);
  write_split("unsup", corpus.unsup, corpus.target_tokens, false);
  write_split("unsup_reference", corpus.unsup, corpus.target_tokens, true);
  WriteTokens(dir / "source_tokens.txt", corpus.source_tokens);
  WriteTokens(dir / "tokens.txt", corpus.target_tokens);
  write_text("source_lexicon.txt", corpus.source_lexicon);
  write_text("lexicon.txt", corpus.target_lexicon);
  write_text("lm.arpa", corpus.target_arpa);
}

}  // namespace lrasr
