// lrasr/pipeline.h
//
// Training regimes (scratch, adaptation, teacher distillation, self-training),
// pseudo-label generation and error-rate evaluation.

#ifndef LRASR_PIPELINE_H_
#define LRASR_PIPELINE_H_

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "lrasr/augment.h"
#include "lrasr/config.h"
#include "lrasr/ctc.h"
#include "lrasr/features.h"
#include "lrasr/model.h"
#include "lrasr/wordlm.h"

namespace lrasr {

struct TrainConfig {
  int minibatch_size = 8;
  std::vector<double> lr_grid{0.0002, 0.0005, 0.001, 0.002};
  std::vector<double> adapt_lr_grid{0.00002, 0.00005, 0.0001, 0.0002};
  std::vector<double> dropout_grid{0.0, 0.1, 0.2, 0.4};
  int max_epochs = 50;
  std::uint64_t seed = 0;
  double learning_rate = 0.001;        // scratch training
  double adapt_learning_rate = 0.0001; // adapting a pretrained model
  std::optional<double> dropout_rate;  // overrides the checkpoint's rate
  int warmup_epochs = 10;              // LIN-only epochs during adaptation
  double lin_lr_scale = 1.0;           // multiplies the rate for lin.* tensors
  std::size_t eval_beam = 20;

  void Validate() const;
};

enum class LabelSource { kPhoneDecode, kWordDecode, kSelf };
std::string LabelSourceName(LabelSource source);
LabelSource ParseLabelSource(const std::string& name);

struct DistillConfig {
  int sup_per_step = 8;
  int unsup_per_step = 32;
  double discount = 1.0;
  LabelSource label_source = LabelSource::kWordDecode;

  void Validate() const;
};

// Everything a regime needs besides data and models.
struct Settings {
  FeatureConfig features;
  AugmentConfig augment;
  TrainConfig train;
  DecodeConfig decode;
  DistillConfig distill;
  std::vector<double> blank_prior_grid{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
  std::vector<double> discount_grid{0.25, 0.5, 1.0};

  // Model architecture keys (model.*), used when initializing from scratch.
  int model_layers = 5;
  int model_hidden = 512;
  bool model_bidirectional = false;
  double model_dropout = 0.0;
};

// Every key ApplyConfig understands.
const std::vector<std::string>& ConfigKeys();

// Reads recognized keys from `cfg` on top of `base`; unknown keys throw.
Settings ApplyConfig(const KeyValueConfig& cfg, Settings base = {});
KeyValueConfig ToKeyValue(const Settings& settings);
std::string ConfigHash(const Settings& settings);

struct ExperimentRecord {
  std::string regime;
  std::vector<double> dev_per;  // index e = epoch e+1
  int selected_epoch = 0;       // 1-based; 0 means the initial model was kept
  double best_dev_per = 0.0;
  std::string best_checkpoint_path;
  std::string config_snapshot;
  std::uint64_t seed = 0;
  std::size_t steps = 0;
  std::size_t sup_consumed = 0;
  std::size_t unsup_consumed = 0;
  std::size_t skipped_infeasible = 0;
  std::size_t skipped_empty_label = 0;

  nlohmann::ordered_json ToJson() const;
};

struct TrainResult {
  ModelCheckpoint model;  // best checkpoint by dev PER
  ExperimentRecord record;
};

// A pseudo-labelled (or ground-truth) training target.
struct LabelledUtterance {
  const Utterance* utterance = nullptr;
  LabelSeq label;
};

struct BatchGradient {
  Gradients grads;
  double loss = 0.0;
  std::size_t used = 0;
  std::size_t skipped_infeasible = 0;
};

// Identifies one training draw of an utterance; seeds its augmentation,
// stacking-offset and dropout streams.
struct DrawTag {
  std::uint64_t epoch = 0;
  std::uint64_t occurrence = 0;
};

// Sum of CTC gradients over `sup` plus `discount` times those over `unsup`,
// each utterance augmented and stacked with a random offset.
BatchGradient ComputeBatchGradient(const ModelCheckpoint& model,
                                   const std::vector<LabelledUtterance>& sup,
                                   const std::vector<DrawTag>& sup_tags,
                                   const std::vector<LabelledUtterance>& unsup,
                                   const std::vector<DrawTag>& unsup_tags, double discount,
                                   const Settings& settings);

// Hooks for tests and progress reporting.
struct TrainHooks {
  std::function<void(int epoch, double dev_per)> on_epoch;
  std::function<void(int epoch, const std::string& id, const LabelSeq& label)> on_self_label;
  std::function<void(int epoch, const ModelCheckpoint& model)> on_epoch_end;
};

// Scratch initialization from the model.* settings.
ModelCheckpoint InitFromSettings(const Settings& settings, const TokenSet& tokens);

// Plain supervised training of `init` on `train`; `trainable` defaults to
// every tensor.
TrainResult TrainSupervised(const ModelCheckpoint& init, const std::vector<Utterance>& train,
                            const std::vector<Utterance>& dev, const Settings& settings,
                            const std::optional<TrainableSet>& trainable = std::nullopt,
                            const TrainHooks& hooks = {});

// Head replacement (+ optional LIN with a LIN/head-only warmup), then
// finetuning at the adaptation learning rate.
TrainResult Adapt(const ModelCheckpoint& pretrained, const TokenSet& target_tokens,
                  const std::vector<Utterance>& train, const std::vector<Utterance>& dev,
                  bool use_lin, const Settings& settings, const TrainHooks& hooks = {});

struct PseudoLabel {
  std::string id;
  LabelSeq phones;
  LabelSource source = LabelSource::kPhoneDecode;
  double teacher_logprob = 0.0;
};

struct PseudoLabelSet {
  std::vector<PseudoLabel> labels;
  std::size_t skipped_empty = 0;
  std::size_t skipped_oov = 0;
};

PseudoLabelSet GeneratePseudoLabels(const ModelCheckpoint& teacher,
                                    const std::vector<Utterance>& unsup, LabelSource source,
                                    const Settings& settings, const Lexicon* lexicon,
                                    const NGramLM* lm);

// JSONL {id, phones, source, teacher_logprob}.
void WritePseudoLabels(const std::string& path, const PseudoLabelSet& set, const TokenSet& tokens);
std::vector<PseudoLabel> ReadPseudoLabels(const std::string& path, const TokenSet& tokens);

// Each step consumes sup_per_step supervised and unsup_per_step
// pseudo-labelled utterances; an epoch is one pass over the supervised set.
// Training continues from `student` with every tensor trainable.
TrainResult TrainDistill(const ModelCheckpoint& student, const std::vector<Utterance>& sup,
                         const std::vector<Utterance>& unsup,
                         const std::vector<PseudoLabel>& labels, const std::vector<Utterance>& dev,
                         const Settings& settings, const TrainHooks& hooks = {});

// As TrainDistill, but each unsupervised draw is labelled on the fly by
// greedy decoding of the current model on the clean utterance.
TrainResult SelfTrain(const ModelCheckpoint& model, const std::vector<Utterance>& sup,
                      const std::vector<Utterance>& unsup, const std::vector<Utterance>& dev,
                      const Settings& settings, const TrainHooks& hooks = {});

// --- evaluation -----------------------------------------------------------

std::size_t EditDistance(const std::vector<int>& ref, const std::vector<int>& hyp);
std::size_t EditDistance(const std::vector<std::string>& ref, const std::vector<std::string>& hyp);

// Drops <NOISE> and <UNK> (any case).
std::vector<std::string> FilterScoringWords(const std::vector<std::string>& words);

struct ErrorRate {
  std::size_t errors = 0;
  std::size_t ref_length = 0;
  double percent() const {
    return ref_length == 0 ? 0.0 : 100.0 * static_cast<double>(errors) / static_cast<double>(ref_length);
  }
};

// Stacked with the eval offset, no augmentation, no dropout.
Matrix EvalPosteriors(const ModelCheckpoint& model, const Utterance& utt, const Settings& settings);

ErrorRate EvaluatePer(const ModelCheckpoint& model, const std::vector<Utterance>& data,
                      const Settings& settings);
ErrorRate EvaluateWer(const ModelCheckpoint& model, const std::vector<Utterance>& data,
                      const Lexicon& lexicon, const NGramLM& lm, const Settings& settings);
ErrorRate ScoreWords(const std::vector<std::vector<std::string>>& refs,
                     const std::vector<std::vector<std::string>>& hyps);

nlohmann::ordered_json MetricJson(const std::string& metric, double value_percent,
                                  const std::string& dataset, const std::string& checkpoint,
                                  const std::string& config_hash);

}  // namespace lrasr

#endif  // LRASR_PIPELINE_H_
