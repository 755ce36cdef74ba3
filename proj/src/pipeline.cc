// pipeline.cc

#include "lrasr/pipeline.h"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <limits>
#include <set>
#include <stdexcept>
#include <unordered_map>

namespace lrasr {

namespace {

using nlohmann::ordered_json;

constexpr double kInf = std::numeric_limits<double>::infinity();

std::string Lower(std::string s) {
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

// Draws indices without replacement, reshuffling once the pool is exhausted.
class CyclingSampler {
 public:
  CyclingSampler(std::size_t n, std::uint64_t seed) : rng_(seed), draws_(n, 0) {
    order_.resize(n);
    for (std::size_t i = 0; i < n; ++i) order_[i] = i;
    rng_.Shuffle(&order_);
  }

  // Returns (index, how many times it was drawn before).
  std::pair<std::size_t, std::uint64_t> Next() {
    if (pos_ == order_.size()) {
      rng_.Shuffle(&order_);
      pos_ = 0;
    }
    const std::size_t i = order_[pos_++];
    return {i, draws_[i]++};
  }

 private:
  Rng rng_;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
  std::vector<std::uint64_t> draws_;
};

struct StepBatch {
  std::vector<LabelledUtterance> sup;
  std::vector<DrawTag> sup_tags;
  std::vector<LabelledUtterance> unsup;
  std::vector<DrawTag> unsup_tags;
};

// Returns the number of steps in `epoch`; called once at the start of it.
using EpochPlanner = std::function<std::size_t(int epoch)>;
using StepFiller = std::function<void(int epoch, std::size_t step, const ModelCheckpoint& model,
                                      StepBatch* batch, ExperimentRecord* record)>;
using TrainableForEpoch = std::function<TrainableSet(int epoch)>;

std::vector<std::size_t> ShuffledOrder(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(seed);
  rng.Shuffle(&order);
  return order;
}

void RequireTranscripts(const std::vector<Utterance>& data, const char* what) {
  for (const auto& u : data)
    if (!u.transcript) throw std::invalid_argument(std::string(what) + ": utterance '" + u.id + "' has no transcript");
}

ModelCheckpoint WithDropout(ModelCheckpoint model, const Settings& settings) {
  if (settings.train.dropout_rate) model.config.dropout_rate = *settings.train.dropout_rate;
  model.config.Validate();
  return model;
}

TrainResult RunTraining(const ModelCheckpoint& init, const std::string& regime,
                        const TrainableForEpoch& trainable_for, double learning_rate,
                        const EpochPlanner& planner, const StepFiller& filler, double discount,
                        const std::vector<Utterance>& dev, const Settings& settings,
                        const TrainHooks& hooks) {
  settings.train.Validate();
  settings.augment.Validate(settings.features.mel_bins);
  if (dev.empty()) throw std::invalid_argument(regime + ": empty dev set");
  RequireTranscripts(dev, regime.c_str());

  TrainResult result;
  ExperimentRecord& rec = result.record;
  rec.regime = regime;
  rec.seed = settings.train.seed;
  rec.config_snapshot = ToKeyValue(settings).Canonical();

  ModelCheckpoint model = init;
  result.model = init;
  Optimizer opt(learning_rate);
  opt.ScaleRate("lin.", settings.train.lin_lr_scale);

  if (settings.train.max_epochs == 0) {
    rec.best_dev_per = EvaluatePer(init, dev, settings).percent();
    return result;
  }

  double best = kInf;
  for (int epoch = 1; epoch <= settings.train.max_epochs; ++epoch) {
    const TrainableSet trainable = trainable_for(epoch);
    const std::size_t steps = planner(epoch);
    for (std::size_t s = 0; s < steps; ++s) {
      StepBatch batch;
      filler(epoch, s, model, &batch, &rec);
      rec.sup_consumed += batch.sup.size();
      rec.unsup_consumed += batch.unsup.size();
      BatchGradient g = ComputeBatchGradient(model, batch.sup, batch.sup_tags, batch.unsup,
                                             batch.unsup_tags, discount, settings);
      rec.skipped_infeasible += g.skipped_infeasible;
      ++rec.steps;
      if (g.used == 0) continue;
      opt.Step(g.grads, trainable, &model);
    }
    const double per = EvaluatePer(model, dev, settings).percent();
    rec.dev_per.push_back(per);
    if (per < best) {
      best = per;
      rec.selected_epoch = epoch;
      rec.best_dev_per = per;
      result.model = model;
    }
    if (hooks.on_epoch) hooks.on_epoch(epoch, per);
    if (hooks.on_epoch_end) hooks.on_epoch_end(epoch, model);
  }
  return result;
}

TrainableSet AllTensors(const ModelCheckpoint& model) {
  TrainableSet all;
  for (const auto& [name, _] : model.tensors) all.insert(name);
  return all;
}

// Supervised batches of minibatch_size over a fresh shuffle each epoch.
struct SupervisedPlan {
  std::vector<LabelledUtterance> labelled;
  std::vector<std::size_t> order;
  std::size_t batch = 8;
  std::uint64_t seed = 0;

  std::size_t Plan(int epoch) {
    order = ShuffledOrder(labelled.size(), DeriveSeed(seed, "shuffle", static_cast<std::uint64_t>(epoch)));
    return (labelled.size() + batch - 1) / batch;
  }
  void Fill(int epoch, std::size_t step, StepBatch* out) const {
    const std::size_t begin = step * batch;
    const std::size_t end = std::min(begin + batch, order.size());
    for (std::size_t i = begin; i < end; ++i) {
      out->sup.push_back(labelled[order[i]]);
      out->sup_tags.push_back({static_cast<std::uint64_t>(epoch), 0});
    }
  }
};

std::vector<LabelledUtterance> GroundTruth(const std::vector<Utterance>& data, const char* what) {
  RequireTranscripts(data, what);
  std::vector<LabelledUtterance> out;
  out.reserve(data.size());
  for (const auto& u : data) out.push_back({&u, *u.transcript});
  return out;
}

// One distillation epoch: floor(N_sup / sup_per_step) steps, at least one.
struct MixedPlan {
  std::vector<LabelledUtterance> sup;
  std::vector<std::size_t> order;
  std::size_t sup_per_step = 8;
  std::size_t unsup_per_step = 32;
  std::uint64_t seed = 0;

  std::size_t Plan(int epoch) {
    order = ShuffledOrder(sup.size(), DeriveSeed(seed, "shuffle", static_cast<std::uint64_t>(epoch)));
    return std::max<std::size_t>(1, sup.size() / sup_per_step);
  }
  void FillSup(int epoch, std::size_t step, StepBatch* out) const {
    for (std::size_t k = 0; k < sup_per_step; ++k) {
      const std::size_t i = (step * sup_per_step + k) % order.size();
      out->sup.push_back(sup[order[i]]);
      out->sup_tags.push_back({static_cast<std::uint64_t>(epoch), 0});
    }
  }
};

}  // namespace

// --- settings -------------------------------------------------------------

void TrainConfig::Validate() const {
  if (minibatch_size < 1) throw std::invalid_argument("train: minibatch_size must be >= 1");
  if (max_epochs < 0) throw std::invalid_argument("train: max_epochs must be >= 0");
  if (!(learning_rate > 0) || !(adapt_learning_rate > 0))
    throw std::invalid_argument("train: learning rates must be > 0");
  if (warmup_epochs < 0) throw std::invalid_argument("train: warmup_epochs must be >= 0");
  if (!(lin_lr_scale > 0)) throw std::invalid_argument("train: lin_lr_scale must be > 0");
  if (eval_beam == 0) throw std::invalid_argument("train: eval_beam must be >= 1");
  if (dropout_rate && !(*dropout_rate >= 0 && *dropout_rate < 1))
    throw std::invalid_argument("train: dropout must lie in [0, 1)");
}

std::string LabelSourceName(LabelSource source) {
  switch (source) {
    case LabelSource::kPhoneDecode: return "phone_decode";
    case LabelSource::kWordDecode: return "word_decode";
    case LabelSource::kSelf: return "self";
  }
  return "?";
}

LabelSource ParseLabelSource(const std::string& name) {
  if (name == "phone_decode") return LabelSource::kPhoneDecode;
  if (name == "word_decode") return LabelSource::kWordDecode;
  if (name == "self") return LabelSource::kSelf;
  throw std::invalid_argument("unknown label source '" + name + "'");
}

void DistillConfig::Validate() const {
  if (sup_per_step < 1) throw std::invalid_argument("distill: sup_per_step must be >= 1");
  if (unsup_per_step < 0) throw std::invalid_argument("distill: unsup_per_step must be >= 0");
  if (!(discount >= 0)) throw std::invalid_argument("distill: discount must be >= 0");
}

const std::vector<std::string>& ConfigKeys() {
  static const std::vector<std::string> keys = {
      "features.sample_rate", "features.window_ms", "features.hop_ms", "features.mel_bins",
      "features.stack_size", "features.eval_stack_offset", "features.fft_size", "features.low_freq",
      "augment.enabled", "augment.speed_factors", "augment.freq_mask_max", "augment.time_mask_max",
      "augment.apply_prob",
      "model.layers", "model.hidden", "model.bidirectional", "model.dropout",
      "train.minibatch_size", "train.lr_grid", "train.adapt_lr_grid", "train.dropout_grid",
      "train.max_epochs", "train.seed", "train.learning_rate", "train.adapt_learning_rate",
      "train.dropout", "train.warmup_epochs", "train.lin_lr_scale", "train.eval_beam",
      "decode.beam", "decode.blank_prior", "decode.lm_weight", "decode.word_insertion_penalty",
      "decode.blank_prior_grid",
      "distill.sup_per_step", "distill.unsup_per_step", "distill.discount", "distill.label_source",
      "distill.discount_grid"};
  return keys;
}

Settings ApplyConfig(const KeyValueConfig& cfg, Settings s) {
  const auto& keys = ConfigKeys();
  const std::set<std::string> known(keys.begin(), keys.end());
  for (const auto& [k, _] : cfg.values())
    if (!known.count(k)) throw std::invalid_argument("unknown config key '" + k + "'");

  auto& f = s.features;
  f.sample_rate = static_cast<int>(cfg.GetInt("features.sample_rate", f.sample_rate));
  f.window_ms = cfg.GetDouble("features.window_ms", f.window_ms);
  f.hop_ms = cfg.GetDouble("features.hop_ms", f.hop_ms);
  f.mel_bins = static_cast<int>(cfg.GetInt("features.mel_bins", f.mel_bins));
  f.stack_size = static_cast<int>(cfg.GetInt("features.stack_size", f.stack_size));
  f.eval_stack_offset = static_cast<int>(cfg.GetInt("features.eval_stack_offset", f.eval_stack_offset));
  f.fft_size = static_cast<int>(cfg.GetInt("features.fft_size", f.fft_size));
  f.low_freq = cfg.GetDouble("features.low_freq", f.low_freq);

  auto& a = s.augment;
  a.enabled = cfg.GetBool("augment.enabled", a.enabled);
  a.speed_factors = cfg.GetDoubleList("augment.speed_factors", a.speed_factors);
  a.freq_mask_max = static_cast<int>(cfg.GetInt("augment.freq_mask_max", a.freq_mask_max));
  a.time_mask_max = static_cast<int>(cfg.GetInt("augment.time_mask_max", a.time_mask_max));
  a.apply_prob = cfg.GetDouble("augment.apply_prob", a.apply_prob);

  s.model_layers = static_cast<int>(cfg.GetInt("model.layers", s.model_layers));
  s.model_hidden = static_cast<int>(cfg.GetInt("model.hidden", s.model_hidden));
  s.model_bidirectional = cfg.GetBool("model.bidirectional", s.model_bidirectional);
  s.model_dropout = cfg.GetDouble("model.dropout", s.model_dropout);

  auto& t = s.train;
  t.minibatch_size = static_cast<int>(cfg.GetInt("train.minibatch_size", t.minibatch_size));
  t.lr_grid = cfg.GetDoubleList("train.lr_grid", t.lr_grid);
  t.adapt_lr_grid = cfg.GetDoubleList("train.adapt_lr_grid", t.adapt_lr_grid);
  t.dropout_grid = cfg.GetDoubleList("train.dropout_grid", t.dropout_grid);
  t.max_epochs = static_cast<int>(cfg.GetInt("train.max_epochs", t.max_epochs));
  t.seed = static_cast<std::uint64_t>(cfg.GetInt("train.seed", static_cast<long long>(t.seed)));
  t.learning_rate = cfg.GetDouble("train.learning_rate", t.learning_rate);
  t.adapt_learning_rate = cfg.GetDouble("train.adapt_learning_rate", t.adapt_learning_rate);
  if (cfg.Has("train.dropout")) t.dropout_rate = cfg.GetDouble("train.dropout", 0.0);
  t.warmup_epochs = static_cast<int>(cfg.GetInt("train.warmup_epochs", t.warmup_epochs));
  t.lin_lr_scale = cfg.GetDouble("train.lin_lr_scale", t.lin_lr_scale);
  t.eval_beam = static_cast<std::size_t>(cfg.GetInt("train.eval_beam", static_cast<long long>(t.eval_beam)));

  auto& d = s.decode;
  d.beam = static_cast<std::size_t>(cfg.GetInt("decode.beam", static_cast<long long>(d.beam)));
  d.blank_prior = cfg.GetDouble("decode.blank_prior", d.blank_prior);
  d.lm_weight = cfg.GetDouble("decode.lm_weight", d.lm_weight);
  d.word_insertion_penalty = cfg.GetDouble("decode.word_insertion_penalty", d.word_insertion_penalty);
  s.blank_prior_grid = cfg.GetDoubleList("decode.blank_prior_grid", s.blank_prior_grid);

  auto& ds = s.distill;
  ds.sup_per_step = static_cast<int>(cfg.GetInt("distill.sup_per_step", ds.sup_per_step));
  ds.unsup_per_step = static_cast<int>(cfg.GetInt("distill.unsup_per_step", ds.unsup_per_step));
  ds.discount = cfg.GetDouble("distill.discount", ds.discount);
  if (auto src = cfg.Get("distill.label_source")) ds.label_source = ParseLabelSource(*src);
  s.discount_grid = cfg.GetDoubleList("distill.discount_grid", s.discount_grid);

  f.Validate();
  a.Validate(f.mel_bins);
  t.Validate();
  d.Validate();
  ds.Validate();
  return s;
}

KeyValueConfig ToKeyValue(const Settings& s) {
  KeyValueConfig c;
  auto num = [](double v) { return FormatNumber(v); };
  auto integer = [](long long v) { return std::to_string(v); };
  auto boolean = [](bool v) { return std::string(v ? "true" : "false"); };
  c.Set("features.sample_rate", integer(s.features.sample_rate));
  c.Set("features.window_ms", num(s.features.window_ms));
  c.Set("features.hop_ms", num(s.features.hop_ms));
  c.Set("features.mel_bins", integer(s.features.mel_bins));
  c.Set("features.stack_size", integer(s.features.stack_size));
  c.Set("features.eval_stack_offset", integer(s.features.eval_stack_offset));
  c.Set("features.fft_size", integer(s.features.fft_size));
  c.Set("features.low_freq", num(s.features.low_freq));
  c.Set("augment.enabled", boolean(s.augment.enabled));
  c.Set("augment.speed_factors", FormatList(s.augment.speed_factors));
  c.Set("augment.freq_mask_max", integer(s.augment.freq_mask_max));
  c.Set("augment.time_mask_max", integer(s.augment.time_mask_max));
  c.Set("augment.apply_prob", num(s.augment.apply_prob));
  c.Set("model.layers", integer(s.model_layers));
  c.Set("model.hidden", integer(s.model_hidden));
  c.Set("model.bidirectional", boolean(s.model_bidirectional));
  c.Set("model.dropout", num(s.model_dropout));
  c.Set("train.minibatch_size", integer(s.train.minibatch_size));
  c.Set("train.lr_grid", FormatList(s.train.lr_grid));
  c.Set("train.adapt_lr_grid", FormatList(s.train.adapt_lr_grid));
  c.Set("train.dropout_grid", FormatList(s.train.dropout_grid));
  c.Set("train.max_epochs", integer(s.train.max_epochs));
  c.Set("train.seed", std::to_string(s.train.seed));
  c.Set("train.learning_rate", num(s.train.learning_rate));
  c.Set("train.adapt_learning_rate", num(s.train.adapt_learning_rate));
  if (s.train.dropout_rate) c.Set("train.dropout", num(*s.train.dropout_rate));
  c.Set("train.warmup_epochs", integer(s.train.warmup_epochs));
  c.Set("train.lin_lr_scale", num(s.train.lin_lr_scale));
  c.Set("train.eval_beam", integer(static_cast<long long>(s.train.eval_beam)));
  c.Set("decode.beam", integer(static_cast<long long>(s.decode.beam)));
  c.Set("decode.blank_prior", num(s.decode.blank_prior));
  c.Set("decode.lm_weight", num(s.decode.lm_weight));
  c.Set("decode.word_insertion_penalty", num(s.decode.word_insertion_penalty));
  c.Set("decode.blank_prior_grid", FormatList(s.blank_prior_grid));
  c.Set("distill.sup_per_step", integer(s.distill.sup_per_step));
  c.Set("distill.unsup_per_step", integer(s.distill.unsup_per_step));
  c.Set("distill.discount", num(s.distill.discount));
  c.Set("distill.label_source", LabelSourceName(s.distill.label_source));
  c.Set("distill.discount_grid", FormatList(s.discount_grid));
  return c;
}

std::string ConfigHash(const Settings& settings) { return HexHash(ToKeyValue(settings).Hash()); }

ordered_json ExperimentRecord::ToJson() const {
  ordered_json j;
  j["regime"] = regime;
  j["seed"] = seed;
  j["dev_per"] = dev_per;
  j["selected_epoch"] = selected_epoch;
  j["best_dev_per"] = best_dev_per;
  j["best_checkpoint"] = best_checkpoint_path;
  j["steps"] = steps;
  j["sup_consumed"] = sup_consumed;
  j["unsup_consumed"] = unsup_consumed;
  j["skipped_infeasible"] = skipped_infeasible;
  j["skipped_empty_label"] = skipped_empty_label;
  j["config"] = config_snapshot;
  return j;
}

// --- training -------------------------------------------------------------

BatchGradient ComputeBatchGradient(const ModelCheckpoint& model,
                                   const std::vector<LabelledUtterance>& sup,
                                   const std::vector<DrawTag>& sup_tags,
                                   const std::vector<LabelledUtterance>& unsup,
                                   const std::vector<DrawTag>& unsup_tags, double discount,
                                   const Settings& settings) {
  if (sup.size() != sup_tags.size() || unsup.size() != unsup_tags.size())
    throw std::invalid_argument("ComputeBatchGradient: tag count mismatch");
  BatchGradient out;
  out.grads = ZeroGradients(model);
  const int blank = model.tokens.blank_index();

  auto accumulate = [&](const LabelledUtterance& item, const DrawTag& tag, double weight) {
    const Utterance& utt = *item.utterance;
    Rng rng(DeriveSeed(settings.train.seed, utt.id, tag.epoch, tag.occurrence));
    const Utterance aug = AugmentUtterance(utt, settings.augment, rng);
    const int offset = static_cast<int>(rng.UniformInt(0, settings.features.stack_size - 1));
    const Matrix input = StackFrames(aug.features, offset, settings.features);
    ForwardCache cache;
    const Matrix logp = ForwardUtterance(model, input, /*training=*/true, rng, &cache);
    CtcResult ctc = CtcLoss(logp, item.label, blank);
    if (!ctc.feasible()) {
      ++out.skipped_infeasible;
      return;
    }
    if (weight != 1.0)
      for (double& g : ctc.grad.data()) g *= weight;
    BackwardUtterance(model, cache, ctc.grad, &out.grads);
    out.loss += weight * ctc.loss;
    ++out.used;
  };
  for (std::size_t i = 0; i < sup.size(); ++i) accumulate(sup[i], sup_tags[i], 1.0);
  for (std::size_t i = 0; i < unsup.size(); ++i) accumulate(unsup[i], unsup_tags[i], discount);
  return out;
}

ModelCheckpoint InitFromSettings(const Settings& settings, const TokenSet& tokens) {
  ModelConfig cfg;
  cfg.num_layers = settings.model_layers;
  cfg.hidden_units = settings.model_hidden;
  cfg.bidirectional = settings.model_bidirectional;
  cfg.input_dim = settings.features.StackedDim();
  cfg.output_dim = static_cast<int>(tokens.size());
  cfg.dropout_rate = settings.model_dropout;
  Rng rng(DeriveSeed(settings.train.seed, "init"));
  return InitModel(cfg, tokens, rng);
}

TrainResult TrainSupervised(const ModelCheckpoint& init, const std::vector<Utterance>& train,
                            const std::vector<Utterance>& dev, const Settings& settings,
                            const std::optional<TrainableSet>& trainable, const TrainHooks& hooks) {
  if (train.empty()) throw std::invalid_argument("train: empty training set");
  const ModelCheckpoint start = WithDropout(init, settings);
  SupervisedPlan plan;
  plan.labelled = GroundTruth(train, "train");
  plan.batch = static_cast<std::size_t>(settings.train.minibatch_size);
  plan.seed = settings.train.seed;
  const TrainableSet set = trainable.value_or(AllTensors(start));
  return RunTraining(
      start, "train", [&](int) { return set; }, settings.train.learning_rate,
      [&](int epoch) { return plan.Plan(epoch); },
      [&](int epoch, std::size_t step, const ModelCheckpoint&, StepBatch* b, ExperimentRecord*) {
        plan.Fill(epoch, step, b);
      },
      1.0, dev, settings, hooks);
}

TrainResult Adapt(const ModelCheckpoint& pretrained, const TokenSet& target_tokens,
                  const std::vector<Utterance>& train, const std::vector<Utterance>& dev,
                  bool use_lin, const Settings& settings, const TrainHooks& hooks) {
  if (train.empty()) throw std::invalid_argument("adapt: empty training set");
  Rng head_rng(DeriveSeed(settings.train.seed, "head"));
  ModelCheckpoint model = ReplaceHead(pretrained, target_tokens, head_rng);
  if (use_lin) model = InsertLin(model);
  model = WithDropout(model, settings);

  const TrainableSet warmup = use_lin ? SetTrainable(model, AdaptPhase::kLinWarmup) : TrainableSet{};
  const TrainableSet full = SetTrainable(model, AdaptPhase::kFull);
  const int warmup_epochs = settings.train.warmup_epochs;

  SupervisedPlan plan;
  plan.labelled = GroundTruth(train, "adapt");
  plan.batch = static_cast<std::size_t>(settings.train.minibatch_size);
  plan.seed = settings.train.seed;
  TrainResult r = RunTraining(
      model, use_lin ? "adapt_lin" : "adapt",
      [&](int epoch) { return use_lin && epoch <= warmup_epochs ? warmup : full; },
      settings.train.adapt_learning_rate, [&](int epoch) { return plan.Plan(epoch); },
      [&](int epoch, std::size_t step, const ModelCheckpoint&, StepBatch* b, ExperimentRecord*) {
        plan.Fill(epoch, step, b);
      },
      1.0, dev, settings, hooks);
  return r;
}

// --- pseudo-labels ----------------------------------------------------------

PseudoLabelSet GeneratePseudoLabels(const ModelCheckpoint& teacher,
                                    const std::vector<Utterance>& unsup, LabelSource source,
                                    const Settings& settings, const Lexicon* lexicon,
                                    const NGramLM* lm) {
  if (source == LabelSource::kSelf)
    throw std::invalid_argument("pseudo-label: 'self' labels are generated during self-training");
  if (source == LabelSource::kWordDecode && (!lexicon || !lm))
    throw std::invalid_argument("pseudo-label: word_decode needs a lexicon and an LM");
  PseudoLabelSet out;
  const int blank = teacher.tokens.blank_index();
  for (const auto& utt : unsup) {
    const Matrix logp = EvalPosteriors(teacher, utt, settings);
    PseudoLabel pl;
    pl.id = utt.id;
    pl.source = source;
    if (source == LabelSource::kPhoneDecode) {
      const Hypothesis best = PrefixBeamDecode(logp, settings.decode.beam, blank).front();
      pl.phones = best.tokens;
      pl.teacher_logprob = best.log_prob;
    } else {
      const WordHypothesis best = WordBeamDecode(logp, *lexicon, *lm, settings.decode, blank);
      if (best.words.empty()) {
        ++out.skipped_empty;
        continue;
      }
      try {
        pl.phones = WordsToPhones(best.words, *lexicon);
      } catch (const OovError&) {
        ++out.skipped_oov;
        continue;
      }
      pl.teacher_logprob = best.log_score;
    }
    if (pl.phones.empty()) {
      ++out.skipped_empty;
      continue;
    }
    out.labels.push_back(std::move(pl));
  }
  return out;
}

void WritePseudoLabels(const std::string& path, const PseudoLabelSet& set, const TokenSet& tokens) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  for (const auto& pl : set.labels) {
    ordered_json j;
    j["id"] = pl.id;
    j["phones"] = tokens.Decode(pl.phones);
    j["source"] = LabelSourceName(pl.source);
    j["teacher_logprob"] = pl.teacher_logprob;
    out << j.dump() << "\n";
  }
  if (!out) throw std::runtime_error("error writing " + path);
}

std::vector<PseudoLabel> ReadPseudoLabels(const std::string& path, const TokenSet& tokens) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open pseudo-label file " + path);
  std::vector<PseudoLabel> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      PseudoLabel pl;
      pl.id = j.at("id").get<std::string>();
      pl.phones = tokens.Encode(j.at("phones").get<std::string>());
      pl.source = ParseLabelSource(j.at("source").get<std::string>());
      pl.teacher_logprob = j.value("teacher_logprob", 0.0);
      out.push_back(std::move(pl));
    } catch (const std::exception& e) {
      throw std::runtime_error(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

// --- distillation -------------------------------------------------------------

TrainResult TrainDistill(const ModelCheckpoint& student, const std::vector<Utterance>& sup,
                         const std::vector<Utterance>& unsup,
                         const std::vector<PseudoLabel>& labels, const std::vector<Utterance>& dev,
                         const Settings& settings, const TrainHooks& hooks) {
  settings.distill.Validate();
  if (sup.empty()) throw std::invalid_argument("distill: empty supervised set");

  std::unordered_map<std::string, const Utterance*> by_id;
  for (const auto& u : unsup) by_id[u.id] = &u;
  std::vector<LabelledUtterance> pool;
  for (const auto& pl : labels) {
    auto it = by_id.find(pl.id);
    if (it == by_id.end()) throw std::invalid_argument("distill: pseudo-label for unknown utterance '" + pl.id + "'");
    if (pl.phones.empty()) continue;
    pool.push_back({it->second, pl.phones});
  }
  const std::size_t unsup_per_step =
      pool.empty() ? 0 : static_cast<std::size_t>(settings.distill.unsup_per_step);

  MixedPlan plan;
  plan.sup = GroundTruth(sup, "distill");
  plan.sup_per_step = static_cast<std::size_t>(settings.distill.sup_per_step);
  plan.seed = settings.train.seed;
  CyclingSampler sampler(pool.size(), DeriveSeed(settings.train.seed, "unsup"));

  const ModelCheckpoint start = WithDropout(student, settings);
  const TrainableSet all = AllTensors(start);
  TrainResult r = RunTraining(
      start, "distill_" + LabelSourceName(settings.distill.label_source), [&](int) { return all; },
      settings.train.adapt_learning_rate, [&](int epoch) { return plan.Plan(epoch); },
      [&](int epoch, std::size_t step, const ModelCheckpoint&, StepBatch* b, ExperimentRecord*) {
        plan.FillSup(epoch, step, b);
        for (std::size_t k = 0; k < unsup_per_step; ++k) {
          const auto [i, occ] = sampler.Next();
          b->unsup.push_back(pool[i]);
          b->unsup_tags.push_back({static_cast<std::uint64_t>(epoch), occ});
        }
      },
      settings.distill.discount, dev, settings, hooks);
  r.record.skipped_empty_label = unsup.size() - pool.size();
  return r;
}

TrainResult SelfTrain(const ModelCheckpoint& model, const std::vector<Utterance>& sup,
                      const std::vector<Utterance>& unsup, const std::vector<Utterance>& dev,
                      const Settings& settings, const TrainHooks& hooks) {
  settings.distill.Validate();
  if (sup.empty()) throw std::invalid_argument("self-train: empty supervised set");

  MixedPlan plan;
  plan.sup = GroundTruth(sup, "self-train");
  plan.sup_per_step = static_cast<std::size_t>(settings.distill.sup_per_step);
  plan.seed = settings.train.seed;
  CyclingSampler sampler(unsup.size(), DeriveSeed(settings.train.seed, "unsup"));
  const std::size_t unsup_per_step =
      unsup.empty() ? 0 : static_cast<std::size_t>(settings.distill.unsup_per_step);

  const ModelCheckpoint start = WithDropout(model, settings);
  const TrainableSet all = AllTensors(start);
  const int blank = start.tokens.blank_index();
  return RunTraining(
      start, "self_train", [&](int) { return all; }, settings.train.adapt_learning_rate,
      [&](int epoch) { return plan.Plan(epoch); },
      [&](int epoch, std::size_t step, const ModelCheckpoint& current, StepBatch* b,
          ExperimentRecord* rec) {
        plan.FillSup(epoch, step, b);
        for (std::size_t k = 0; k < unsup_per_step; ++k) {
          const auto [i, occ] = sampler.Next();
          const Utterance& utt = unsup[i];
          LabelSeq label = GreedyDecode(EvalPosteriors(current, utt, settings), blank).tokens;
          if (hooks.on_self_label) hooks.on_self_label(epoch, utt.id, label);
          b->unsup_tags.push_back({static_cast<std::uint64_t>(epoch), occ});
          if (label.empty()) {
            ++rec->skipped_empty_label;
            b->unsup_tags.pop_back();
            ++rec->unsup_consumed;  // drawn, but contributes nothing
            continue;
          }
          b->unsup.push_back({&utt, std::move(label)});
        }
      },
      settings.distill.discount, dev, settings, hooks);
}

// --- evaluation -------------------------------------------------------------

namespace {

template <typename T>
std::size_t Levenshtein(const std::vector<T>& ref, const std::vector<T>& hyp) {
  std::vector<std::size_t> prev(hyp.size() + 1), cur(hyp.size() + 1);
  for (std::size_t j = 0; j <= hyp.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= ref.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= hyp.size(); ++j) {
      const std::size_t sub = prev[j - 1] + (ref[i - 1] == hyp[j - 1] ? 0 : 1);
      cur[j] = std::min({sub, prev[j] + 1, cur[j - 1] + 1});
    }
    std::swap(prev, cur);
  }
  return prev[hyp.size()];
}

}  // namespace

std::size_t EditDistance(const std::vector<int>& ref, const std::vector<int>& hyp) {
  return Levenshtein(ref, hyp);
}

std::size_t EditDistance(const std::vector<std::string>& ref, const std::vector<std::string>& hyp) {
  return Levenshtein(ref, hyp);
}

std::vector<std::string> FilterScoringWords(const std::vector<std::string>& words) {
  std::vector<std::string> out;
  for (const auto& w : words) {
    const std::string l = Lower(w);
    if (l == "<noise>" || l == "<unk>") continue;
    out.push_back(w);
  }
  return out;
}

Matrix EvalPosteriors(const ModelCheckpoint& model, const Utterance& utt, const Settings& settings) {
  const Matrix input = StackFrames(utt.features, settings.features.eval_stack_offset, settings.features);
  Rng unused(0);
  return ForwardUtterance(model, input, /*training=*/false, unused);
}

ErrorRate EvaluatePer(const ModelCheckpoint& model, const std::vector<Utterance>& data,
                      const Settings& settings) {
  if (data.empty()) throw std::invalid_argument("evaluate: empty dataset");
  RequireTranscripts(data, "evaluate");
  ErrorRate er;
  const int blank = model.tokens.blank_index();
  for (const auto& utt : data) {
    const Matrix logp = EvalPosteriors(model, utt, settings);
    const LabelSeq hyp = PrefixBeamDecode(logp, settings.train.eval_beam, blank).front().tokens;
    er.errors += EditDistance(*utt.transcript, hyp);
    er.ref_length += utt.transcript->size();
  }
  return er;
}

ErrorRate ScoreWords(const std::vector<std::vector<std::string>>& refs,
                     const std::vector<std::vector<std::string>>& hyps) {
  if (refs.size() != hyps.size()) throw std::invalid_argument("ScoreWords: size mismatch");
  ErrorRate er;
  for (std::size_t i = 0; i < refs.size(); ++i) {
    const auto r = FilterScoringWords(refs[i]);
    er.errors += EditDistance(r, FilterScoringWords(hyps[i]));
    er.ref_length += r.size();
  }
  return er;
}

ErrorRate EvaluateWer(const ModelCheckpoint& model, const std::vector<Utterance>& data,
                      const Lexicon& lexicon, const NGramLM& lm, const Settings& settings) {
  if (data.empty()) throw std::invalid_argument("evaluate: empty dataset");
  std::vector<std::vector<std::string>> refs, hyps;
  const int blank = model.tokens.blank_index();
  for (const auto& utt : data) {
    if (!utt.words) throw std::invalid_argument("evaluate: utterance '" + utt.id + "' has no word reference");
    refs.push_back(*utt.words);
    hyps.push_back(WordBeamDecode(EvalPosteriors(model, utt, settings), lexicon, lm, settings.decode, blank).words);
  }
  return ScoreWords(refs, hyps);
}

ordered_json MetricJson(const std::string& metric, double value_percent, const std::string& dataset,
                        const std::string& checkpoint, const std::string& config_hash) {
  ordered_json j;
  j["metric"] = metric;
  j["value_percent"] = value_percent;
  j["dataset"] = dataset;
  j["checkpoint"] = checkpoint;
  j["config_hash"] = config_hash;
  return j;
}

}  // namespace lrasr
