#include <cmath>
#include <filesystem>
#include <map>
#include <set>

#include "doctest.h"
#include "lrasr/pipeline.h"
#include "lrasr/synth.h"

using namespace lrasr;

namespace {

struct Tiny {
  SynthCorpus corpus;
  std::vector<Utterance> train, dev, unsup;
  Settings settings;
};

const Tiny& TinySetup() {
  static const Tiny tiny = [] {
    SynthConfig sc;
    sc.seed = 9;
    sc.num_phones = 8;
    sc.target_phones = 6;
    sc.source_words = 10;
    sc.target_words = 10;
    sc.min_words = 1;
    sc.max_words = 2;
    sc.source_train = 8;
    sc.target_train = 16;
    sc.dev = 6;
    sc.test = 4;
    sc.unsup = 12;
    sc.lm_sentences = 50;
    sc.utts_per_speaker = 4;
    Tiny t;
    t.corpus = GenerateCorpus(sc);
    t.train = SpeakerMeanNormalize(t.corpus.target_train);
    t.dev = SpeakerMeanNormalize(t.corpus.dev);
    t.unsup = SpeakerMeanNormalize(t.corpus.unsup);
    t.settings.model_layers = 1;
    t.settings.model_hidden = 6;
    t.settings.train.max_epochs = 2;
    t.settings.train.learning_rate = 0.01;
    t.settings.train.adapt_learning_rate = 0.005;
    t.settings.train.seed = 5;
    t.settings.train.eval_beam = 4;
    t.settings.decode.beam = 4;
    return t;
  }();
  return tiny;
}

std::vector<LabelledUtterance> Labelled(const std::vector<Utterance>& data, std::size_t n) {
  std::vector<LabelledUtterance> out;
  for (std::size_t i = 0; i < n && i < data.size(); ++i) out.push_back({&data[i], *data[i].transcript});
  return out;
}

std::vector<std::string> Chars(const std::string& s) {
  std::vector<std::string> out;
  for (char c : s) out.emplace_back(1, c);
  return out;
}

}  // namespace

TEST_CASE("edit distance reference pairs") {
  CHECK(EditDistance(Chars("kitten"), Chars("sitting")) == 3);
  CHECK(EditDistance(Chars("flaw"), Chars("lawn")) == 2);
  CHECK(EditDistance(Chars(""), Chars("abc")) == 3);
  CHECK(EditDistance(Chars("abc"), Chars("")) == 3);
  CHECK(EditDistance(std::vector<int>{1, 2, 3}, std::vector<int>{1, 2, 3}) == 0);
  CHECK(EditDistance(std::vector<int>{1, 2, 3}, std::vector<int>{3, 2, 1}) == 2);
}

TEST_CASE("scoring drops noise and unknown markers in any case") {
  CHECK(FilterScoringWords({"a", "<NOISE>", "b", "<unk>", "<Unk>", "<noise>", "c"}) ==
        std::vector<std::string>{"a", "b", "c"});
  CHECK(FilterScoringWords({"<NOISE_X>", "NOISE"}) == std::vector<std::string>{"<NOISE_X>", "NOISE"});

  // Reference "a <NOISE> b" scored against "a b <UNK>": no errors, length 2.
  ErrorRate er = ScoreWords({{"a", "<NOISE>", "b"}}, {{"a", "b", "<UNK>"}});
  CHECK(er.errors == 0);
  CHECK(er.ref_length == 2);
  // Markers are not free when they replace a real word.
  er = ScoreWords({{"a", "b"}, {"c"}}, {{"a", "<UNK>"}, {"c", "d"}});
  CHECK(er.errors == 2);
  CHECK(er.ref_length == 3);
  CHECK(er.percent() == doctest::Approx(200.0 / 3.0));
  CHECK(ErrorRate{}.percent() == 0.0);
  CHECK_THROWS(ScoreWords({{"a"}}, {}));
}

TEST_CASE("config keys parse, validate and hash stably") {
  const auto cfg = KeyValueConfig::Parse(
      "# comment\ntrain.learning_rate = 0.01\naugment.speed_factors = 0.8, 1.0\n"
      "distill.label_source = phone_decode\nmodel.bidirectional = true\ntrain.dropout = 0.2\n");
  const Settings s = ApplyConfig(cfg);
  CHECK(s.train.learning_rate == 0.01);
  CHECK(s.augment.speed_factors == std::vector<double>{0.8, 1.0});
  CHECK(s.distill.label_source == LabelSource::kPhoneDecode);
  CHECK(s.model_bidirectional);
  CHECK(s.train.dropout_rate == 0.2);

  CHECK_THROWS(ApplyConfig(KeyValueConfig::Parse("train.nonsense = 1\n")));
  CHECK_THROWS(ApplyConfig(KeyValueConfig::Parse("augment.apply_prob = 2\n")));
  CHECK_THROWS(ApplyConfig(KeyValueConfig::Parse("distill.label_source = magic\n")));
  CHECK_THROWS(ApplyConfig(KeyValueConfig::Parse("train.max_epochs = abc\n")));
  CHECK_THROWS(ApplyConfig(KeyValueConfig::Parse("train.lin_lr_scale = 0\n")));

  // Every key survives a round trip through the canonical form.
  const Settings back = ApplyConfig(ToKeyValue(s));
  CHECK(ToKeyValue(back).Canonical() == ToKeyValue(s).Canonical());
  CHECK(ConfigHash(back) == ConfigHash(s));
  Settings other = s;
  other.train.seed = 77;
  CHECK(ConfigHash(other) != ConfigHash(s));
  for (const auto& key : ConfigKeys()) CHECK(ToKeyValue(s).Has(key));
}

TEST_CASE("zero discount makes unsupervised items inert") {
  const Tiny& t = TinySetup();
  const ModelCheckpoint m = InitFromSettings(t.settings, t.corpus.target_tokens);
  const auto sup = Labelled(t.train, 3);
  const std::vector<DrawTag> sup_tags(3, DrawTag{1, 0});
  std::vector<LabelledUtterance> unsup;
  for (std::size_t i = 0; i < 4; ++i) unsup.push_back({&t.unsup[i], *t.unsup[i].transcript});
  const std::vector<DrawTag> unsup_tags(4, DrawTag{1, 0});

  const BatchGradient only = ComputeBatchGradient(m, sup, sup_tags, {}, {}, 1.0, t.settings);
  const BatchGradient zero = ComputeBatchGradient(m, sup, sup_tags, unsup, unsup_tags, 0.0, t.settings);
  for (const auto& [name, g] : only.grads) CHECK(zero.grads.at(name) == g);
  CHECK(zero.loss == only.loss);

  const BatchGradient full = ComputeBatchGradient(m, sup, sup_tags, unsup, unsup_tags, 1.0, t.settings);
  CHECK(full.used == 7);
  CHECK(full.grads.at("head.weight") != only.grads.at("head.weight"));
  CHECK_THROWS(ComputeBatchGradient(m, sup, {}, {}, {}, 1.0, t.settings));
}

TEST_CASE("draw tags fully determine a batch gradient") {
  const Tiny& t = TinySetup();
  Settings s = t.settings;
  s.model_dropout = 0.2;
  const ModelCheckpoint m = InitFromSettings(s, t.corpus.target_tokens);
  const auto sup = Labelled(t.train, 2);
  const auto a = ComputeBatchGradient(m, sup, {{1, 0}, {1, 0}}, {}, {}, 1.0, s);
  const auto b = ComputeBatchGradient(m, sup, {{1, 0}, {1, 0}}, {}, {}, 1.0, s);
  const auto c = ComputeBatchGradient(m, sup, {{2, 0}, {2, 0}}, {}, {}, 1.0, s);
  CHECK(a.loss == b.loss);
  CHECK(a.loss != c.loss);
}

TEST_CASE("supervised training is deterministic and picks the earliest best epoch") {
  const Tiny& t = TinySetup();
  const ModelCheckpoint init = InitFromSettings(t.settings, t.corpus.target_tokens);
  std::vector<double> seen;
  TrainHooks hooks;
  hooks.on_epoch = [&](int, double per) { seen.push_back(per); };
  const TrainResult a = TrainSupervised(init, t.train, t.dev, t.settings, std::nullopt, hooks);
  const TrainResult b = TrainSupervised(init, t.train, t.dev, t.settings);
  CHECK(SerializeCheckpoint(a.model) == SerializeCheckpoint(b.model));
  CHECK(a.record.ToJson().dump() == b.record.ToJson().dump());

  REQUIRE(a.record.dev_per.size() == 2);
  CHECK(seen == a.record.dev_per);
  const auto best = std::min_element(a.record.dev_per.begin(), a.record.dev_per.end());
  CHECK(a.record.selected_epoch == 1 + (best - a.record.dev_per.begin()));
  CHECK(a.record.best_dev_per == *best);
  CHECK(EvaluatePer(a.model, t.dev, t.settings).percent() == a.record.best_dev_per);
  CHECK(a.record.steps == 4);  // 16 utterances, batches of 8, 2 epochs
  CHECK(a.record.sup_consumed == 32);

  Settings other = t.settings;
  other.train.seed = 6;
  const TrainResult c = TrainSupervised(InitFromSettings(other, t.corpus.target_tokens), t.train, t.dev, other);
  CHECK(SerializeCheckpoint(c.model) != SerializeCheckpoint(a.model));
}

TEST_CASE("zero epochs returns the initial model") {
  const Tiny& t = TinySetup();
  Settings s = t.settings;
  s.train.max_epochs = 0;
  const ModelCheckpoint init = InitFromSettings(s, t.corpus.target_tokens);
  const TrainResult r = TrainSupervised(init, t.train, t.dev, s);
  CHECK(r.model.tensors == init.tensors);
  CHECK(r.record.selected_epoch == 0);
  CHECK(r.record.best_dev_per == EvaluatePer(init, t.dev, s).percent());
}

TEST_CASE("evaluation and pseudo-labelling never augment") {
  const Tiny& t = TinySetup();
  const ModelCheckpoint m = InitFromSettings(t.settings, t.corpus.target_tokens);
  const Lexicon lex = ParseLexicon(t.corpus.target_lexicon, t.corpus.target_tokens);
  const NGramLM lm = ParseArpa(t.corpus.target_arpa);
  const auto before = AugmentCallCount();
  EvaluatePer(m, t.dev, t.settings);
  EvaluateWer(m, t.dev, lex, lm, t.settings);
  GeneratePseudoLabels(m, t.unsup, LabelSource::kPhoneDecode, t.settings, nullptr, nullptr);
  GeneratePseudoLabels(m, t.unsup, LabelSource::kWordDecode, t.settings, &lex, &lm);
  CHECK(AugmentCallCount() == before);
  // Training does augment, once per utterance draw.
  Settings s = t.settings;
  s.train.max_epochs = 1;
  TrainSupervised(m, t.train, t.dev, s);
  CHECK(AugmentCallCount() == before + t.train.size());
}

TEST_CASE("pseudo-labels agree with the teacher's own decodes") {
  const Tiny& t = TinySetup();
  const TrainResult teacher = TrainSupervised(InitFromSettings(t.settings, t.corpus.target_tokens), t.train,
                                              t.dev, t.settings);
  const Lexicon lex = ParseLexicon(t.corpus.target_lexicon, t.corpus.target_tokens);
  const NGramLM lm = ParseArpa(t.corpus.target_arpa);
  const int blank = teacher.model.tokens.blank_index();

  const PseudoLabelSet phones =
      GeneratePseudoLabels(teacher.model, t.unsup, LabelSource::kPhoneDecode, t.settings, nullptr, nullptr);
  std::map<std::string, const Utterance*> by_id;
  for (const auto& u : t.unsup) by_id[u.id] = &u;
  CHECK(phones.labels.size() + phones.skipped_empty == t.unsup.size());
  for (const auto& pl : phones.labels) {
    const Matrix logp = EvalPosteriors(teacher.model, *by_id.at(pl.id), t.settings);
    const Hypothesis h = PrefixBeamDecode(logp, t.settings.decode.beam, blank).front();
    CHECK(pl.phones == h.tokens);
    CHECK(pl.teacher_logprob == h.log_prob);
    CHECK(pl.source == LabelSource::kPhoneDecode);
  }

  const PseudoLabelSet words =
      GeneratePseudoLabels(teacher.model, t.unsup, LabelSource::kWordDecode, t.settings, &lex, &lm);
  CHECK(words.labels.size() + words.skipped_empty + words.skipped_oov == t.unsup.size());
  for (const auto& pl : words.labels) {
    const Matrix logp = EvalPosteriors(teacher.model, *by_id.at(pl.id), t.settings);
    const WordHypothesis h = WordBeamDecode(logp, lex, lm, t.settings.decode, blank);
    CHECK(pl.phones == WordsToPhones(h.words, lex));
  }
  CHECK_THROWS(GeneratePseudoLabels(teacher.model, t.unsup, LabelSource::kWordDecode, t.settings, nullptr, &lm));
  CHECK_THROWS(GeneratePseudoLabels(teacher.model, t.unsup, LabelSource::kSelf, t.settings, nullptr, nullptr));

  const auto path = (std::filesystem::temp_directory_path() / "lrasr_pl.jsonl").string();
  WritePseudoLabels(path, words, t.corpus.target_tokens);
  const auto back = ReadPseudoLabels(path, t.corpus.target_tokens);
  REQUIRE(back.size() == words.labels.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    CHECK(back[i].id == words.labels[i].id);
    CHECK(back[i].phones == words.labels[i].phones);
    CHECK(back[i].source == LabelSource::kWordDecode);
  }
}

TEST_CASE("distillation consumes 8 supervised and 32 pseudo-labelled items per step") {
  const Tiny& t = TinySetup();
  Settings s = t.settings;
  s.train.max_epochs = 3;
  std::vector<PseudoLabel> labels;
  for (const auto& u : t.unsup) labels.push_back({u.id, *u.transcript, LabelSource::kWordDecode, 0.0});
  const ModelCheckpoint student = InitFromSettings(s, t.corpus.target_tokens);
  const TrainResult r = TrainDistill(student, t.train, t.unsup, labels, t.dev, s);
  CHECK(r.record.regime == "distill_word_decode");
  CHECK(r.record.steps == 6);  // 16 / 8 = 2 steps per epoch
  CHECK(r.record.sup_consumed == 6 * 8);
  CHECK(r.record.unsup_consumed == 6 * 32);
  CHECK(r.record.skipped_empty_label == 0);

  // Without pseudo-labels only the supervised half remains.
  const TrainResult none = TrainDistill(student, t.train, t.unsup, {}, t.dev, s);
  CHECK(none.record.unsup_consumed == 0);
  CHECK(none.record.skipped_empty_label == t.unsup.size());

  std::vector<PseudoLabel> bad{{"no-such-id", {1}, LabelSource::kPhoneDecode, 0.0}};
  CHECK_THROWS(TrainDistill(student, t.train, t.unsup, bad, t.dev, s));
}

TEST_CASE("a zero discount distillation equals supervised-only mixed training") {
  const Tiny& t = TinySetup();
  Settings s = t.settings;
  s.distill.discount = 0.0;
  std::vector<PseudoLabel> labels;
  for (const auto& u : t.unsup) labels.push_back({u.id, *u.transcript, LabelSource::kPhoneDecode, 0.0});
  const ModelCheckpoint student = InitFromSettings(s, t.corpus.target_tokens);
  const TrainResult with = TrainDistill(student, t.train, t.unsup, labels, t.dev, s);
  const TrainResult without = TrainDistill(student, t.train, t.unsup, {}, t.dev, s);
  CHECK(with.model.tensors == without.model.tensors);
}

TEST_CASE("self-training relabels with the current model") {
  const Tiny& t = TinySetup();
  Settings s = t.settings;
  s.train.max_epochs = 3;
  s.train.adapt_learning_rate = 0.02;
  const TrainResult base = TrainSupervised(InitFromSettings(s, t.corpus.target_tokens), t.train, t.dev, s);
  std::map<std::string, std::map<int, LabelSeq>> labels;
  std::size_t calls = 0;
  TrainHooks hooks;
  hooks.on_self_label = [&](int epoch, const std::string& id, const LabelSeq& label) {
    labels[id][epoch] = label;
    ++calls;
  };
  const TrainResult r = SelfTrain(base.model, t.train, t.unsup, t.dev, s, hooks);
  CHECK(r.record.regime == "self_train");
  CHECK(calls == 6 * 32);
  CHECK(r.record.unsup_consumed == 6 * 32);
  std::size_t changed = 0;
  for (const auto& [id, by_epoch] : labels)
    if (by_epoch.count(1) && by_epoch.count(3) && by_epoch.at(1) != by_epoch.at(3)) ++changed;
  CHECK(changed > 0);
}

TEST_CASE("adaptation warmup leaves LSTM tensors untouched") {
  const Tiny& t = TinySetup();
  Settings s = t.settings;
  s.train.max_epochs = 3;
  s.train.warmup_epochs = 2;
  const ModelCheckpoint pre = InitFromSettings(s, t.corpus.source_tokens);
  std::map<int, ModelCheckpoint> snapshots;
  TrainHooks hooks;
  hooks.on_epoch_end = [&](int epoch, const ModelCheckpoint& m) { snapshots[epoch] = m; };
  const TrainResult r = Adapt(pre, t.corpus.target_tokens, t.train, t.dev, true, s, hooks);
  CHECK(r.record.regime == "adapt_lin");
  for (int epoch : {1, 2}) {
    for (const auto& [name, tensor] : pre.tensors)
      if (name.rfind("lstm.", 0) == 0) CHECK(snapshots.at(epoch).tensor(name) == tensor);
    CHECK(snapshots.at(epoch).tensor("lin.weight") != Matrix::Identity(static_cast<std::size_t>(s.features.StackedDim())));
  }
  CHECK(snapshots.at(3).tensor("lstm.0.fw.w_input") != pre.tensor("lstm.0.fw.w_input"));
  CHECK(r.model.tokens == t.corpus.target_tokens);

  const TrainResult plain = Adapt(pre, t.corpus.target_tokens, t.train, t.dev, false, s);
  CHECK(plain.record.regime == "adapt");
  CHECK_FALSE(plain.model.has_lin());
}

TEST_CASE("metric json has the fixed field order") {
  const auto j = MetricJson("dev_per", 12.5, "dev.jsonl", "m.ckpt", "abc");
  CHECK(j.dump() == R"({"metric":"dev_per","value_percent":12.5,"dataset":"dev.jsonl","checkpoint":"m.ckpt","config_hash":"abc"})");
}
