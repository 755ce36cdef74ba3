// lrasr command-line driver.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "lrasr/features.h"
#include "lrasr/model.h"
#include "lrasr/pipeline.h"
#include "lrasr/synth.h"
#include "lrasr/wordlm.h"

namespace fs = std::filesystem;
using namespace lrasr;

namespace {

// Options every subcommand shares: --config, --seed and one flag per config key.
struct CommonOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::map<std::string, std::string> overrides;
  bool verbose = false;

  Settings Resolve() const {
    KeyValueConfig cfg;
    if (!config_path.empty()) cfg = KeyValueConfig::Load(config_path);
    for (const auto& [k, v] : overrides)
      if (!v.empty()) cfg.Set(k, v);
    if (seed) cfg.Set("train.seed", std::to_string(*seed));
    return ApplyConfig(cfg);
  }
};

void AddCommon(CLI::App* app, CommonOptions* opts) {
  app->add_option("--config", opts->config_path, "key = value config file")->check(CLI::ExistingFile);
  app->add_option("--seed", opts->seed, "overrides train.seed");
  app->add_flag("-v,--verbose", opts->verbose, "per-epoch progress on stderr");
  for (const auto& key : ConfigKeys())
    app->add_option("--" + key, opts->overrides[key], "config key " + key)->group("Config keys");
}

std::vector<Utterance> LoadSet(const std::string& manifest, const TokenSet& tokens, const Settings& s) {
  return SpeakerMeanNormalize(LoadUtterances(manifest, tokens, s.features));
}

std::string DatasetName(const std::string& manifest) { return fs::path(manifest).stem().string(); }

void PrintJson(const nlohmann::ordered_json& j) { std::cout << j.dump() << std::endl; }

TrainHooks ProgressHooks(const CommonOptions& opts) {
  TrainHooks hooks;
  if (opts.verbose)
    hooks.on_epoch = [](int epoch, double per) { std::fprintf(stderr, "epoch %d dev PER %.2f\n", epoch, per); };
  return hooks;
}

void WriteRecord(const std::string& path, ExperimentRecord record, const std::string& checkpoint) {
  record.best_checkpoint_path = checkpoint;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << record.ToJson().dump(2) << "\n";
}

// Saves the best model and its record, and prints the dev metric.
void Finish(const TrainResult& r, const std::string& out, const std::string& record_path, const std::string& dev,
            const Settings& s) {
  SaveCheckpoint(out, r.model);
  WriteRecord(record_path.empty() ? out + ".record.json" : record_path, r.record, out);
  PrintJson(MetricJson("dev_per", r.record.best_dev_per, DatasetName(dev), out, ConfigHash(s)));
}

struct WordResources {
  Lexicon lexicon;
  NGramLM lm;
};

WordResources LoadWordResources(const std::string& lexicon, const std::string& lm, const TokenSet& tokens) {
  if (lexicon.empty() || lm.empty()) throw std::invalid_argument("word decoding needs --lexicon and --lm");
  return {LoadLexicon(lexicon, tokens), LoadArpa(lm)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Low-resource CTC speech recognition toolkit"};
  app.require_subcommand(1);

  // extract-features
  CommonOptions fx_opts;
  std::string fx_manifest, fx_out_dir, fx_out_manifest;
  auto* fx = app.add_subcommand("extract-features", "compute LFBE feature files for an audio manifest");
  AddCommon(fx, &fx_opts);
  fx->add_option("--manifest", fx_manifest)->required()->check(CLI::ExistingFile);
  fx->add_option("--out-dir", fx_out_dir)->required();
  fx->add_option("--out-manifest", fx_out_manifest)->required();

  // train
  CommonOptions tr_opts;
  std::string tr_train, tr_dev, tr_tokens, tr_init, tr_out, tr_record;
  auto* tr = app.add_subcommand("train", "supervised training from scratch or from --init");
  AddCommon(tr, &tr_opts);
  tr->add_option("--train", tr_train)->required()->check(CLI::ExistingFile);
  tr->add_option("--dev", tr_dev)->required()->check(CLI::ExistingFile);
  tr->add_option("--tokens", tr_tokens, "token list (required without --init)");
  tr->add_option("--init", tr_init, "initial checkpoint")->check(CLI::ExistingFile);
  tr->add_option("--out", tr_out)->required();
  tr->add_option("--record", tr_record);

  // adapt
  CommonOptions ad_opts;
  std::string ad_pretrained, ad_train, ad_dev, ad_tokens, ad_out, ad_record;
  bool ad_lin = false;
  auto* ad = app.add_subcommand("adapt", "replace the head (optionally insert LIN) and finetune");
  AddCommon(ad, &ad_opts);
  ad->add_option("--pretrained", ad_pretrained)->required()->check(CLI::ExistingFile);
  ad->add_option("--train", ad_train)->required()->check(CLI::ExistingFile);
  ad->add_option("--dev", ad_dev)->required()->check(CLI::ExistingFile);
  ad->add_option("--tokens", ad_tokens, "target token list")->required()->check(CLI::ExistingFile);
  ad->add_flag("--lin", ad_lin, "insert a linear input network with a warmup phase");
  ad->add_option("--out", ad_out)->required();
  ad->add_option("--record", ad_record);

  // pseudo-label
  CommonOptions pl_opts;
  std::string pl_teacher, pl_unsup, pl_source = "word_decode", pl_lexicon, pl_lm, pl_out;
  auto* pl = app.add_subcommand("pseudo-label", "label untranscribed data with a teacher");
  AddCommon(pl, &pl_opts);
  pl->add_option("--teacher", pl_teacher)->required()->check(CLI::ExistingFile);
  pl->add_option("--unsup", pl_unsup)->required()->check(CLI::ExistingFile);
  pl->add_option("--source", pl_source)->check(CLI::IsMember({"phone_decode", "word_decode"}));
  pl->add_option("--lexicon", pl_lexicon)->check(CLI::ExistingFile);
  pl->add_option("--lm", pl_lm)->check(CLI::ExistingFile);
  pl->add_option("--out", pl_out)->required();

  // distill
  CommonOptions ds_opts;
  std::string ds_student, ds_train, ds_unsup, ds_labels, ds_dev, ds_out, ds_record;
  auto* ds = app.add_subcommand("distill", "train a student on ground truth plus pseudo-labels");
  AddCommon(ds, &ds_opts);
  ds->add_option("--student", ds_student, "student initialization")->required()->check(CLI::ExistingFile);
  ds->add_option("--train", ds_train)->required()->check(CLI::ExistingFile);
  ds->add_option("--unsup", ds_unsup)->required()->check(CLI::ExistingFile);
  ds->add_option("--labels", ds_labels)->required()->check(CLI::ExistingFile);
  ds->add_option("--dev", ds_dev)->required()->check(CLI::ExistingFile);
  ds->add_option("--out", ds_out)->required();
  ds->add_option("--record", ds_record);

  // self-train
  CommonOptions st_opts;
  std::string st_init, st_train, st_unsup, st_dev, st_out, st_record;
  auto* st = app.add_subcommand("self-train", "semi-supervised training with on-the-fly greedy labels");
  AddCommon(st, &st_opts);
  st->add_option("--init", st_init)->required()->check(CLI::ExistingFile);
  st->add_option("--train", st_train)->required()->check(CLI::ExistingFile);
  st->add_option("--unsup", st_unsup)->required()->check(CLI::ExistingFile);
  st->add_option("--dev", st_dev)->required()->check(CLI::ExistingFile);
  st->add_option("--out", st_out)->required();
  st->add_option("--record", st_record);

  // decode
  CommonOptions dc_opts;
  std::string dc_ckpt, dc_data, dc_lexicon, dc_lm, dc_out;
  bool dc_words = false;
  auto* dc = app.add_subcommand("decode", "write 1-best hypotheses as JSON lines");
  AddCommon(dc, &dc_opts);
  dc->add_option("--checkpoint", dc_ckpt)->required()->check(CLI::ExistingFile);
  dc->add_option("--data", dc_data)->required()->check(CLI::ExistingFile);
  dc->add_flag("--words", dc_words, "word decoding with --lexicon and --lm");
  dc->add_option("--lexicon", dc_lexicon)->check(CLI::ExistingFile);
  dc->add_option("--lm", dc_lm)->check(CLI::ExistingFile);
  dc->add_option("--out", dc_out, "output file (default stdout)");

  // evaluate
  CommonOptions ev_opts;
  std::string ev_ckpt, ev_data, ev_metric = "per", ev_lexicon, ev_lm;
  auto* ev = app.add_subcommand("evaluate", "phone or word error rate of a checkpoint");
  AddCommon(ev, &ev_opts);
  ev->add_option("--checkpoint", ev_ckpt)->required()->check(CLI::ExistingFile);
  ev->add_option("--data", ev_data)->required()->check(CLI::ExistingFile);
  ev->add_option("--metric", ev_metric)->check(CLI::IsMember({"per", "wer"}));
  ev->add_option("--lexicon", ev_lexicon)->check(CLI::ExistingFile);
  ev->add_option("--lm", ev_lm)->check(CLI::ExistingFile);

  // sweep
  CommonOptions sw_opts;
  std::string sw_param, sw_regime = "train", sw_train, sw_dev, sw_tokens, sw_init, sw_unsup, sw_labels,
                        sw_lexicon, sw_lm, sw_out_dir;
  auto* sw = app.add_subcommand("sweep", "grid search one hyperparameter, selecting on dev");
  AddCommon(sw, &sw_opts);
  sw->add_option("--param", sw_param)
      ->required()
      ->check(CLI::IsMember({"learning_rate", "adapt_learning_rate", "dropout", "blank_prior", "discount"}));
  sw->add_option("--regime", sw_regime)->check(CLI::IsMember({"train", "adapt", "adapt_lin", "distill"}));
  sw->add_option("--train", sw_train)->check(CLI::ExistingFile);
  sw->add_option("--dev", sw_dev)->required()->check(CLI::ExistingFile);
  sw->add_option("--tokens", sw_tokens)->check(CLI::ExistingFile);
  sw->add_option("--init", sw_init, "checkpoint to start from (or to decode, for blank_prior)")
      ->check(CLI::ExistingFile);
  sw->add_option("--unsup", sw_unsup)->check(CLI::ExistingFile);
  sw->add_option("--labels", sw_labels)->check(CLI::ExistingFile);
  sw->add_option("--lexicon", sw_lexicon)->check(CLI::ExistingFile);
  sw->add_option("--lm", sw_lm)->check(CLI::ExistingFile);
  sw->add_option("--out-dir", sw_out_dir)->required();

  // synth-corpus
  CommonOptions sy_opts;
  std::string sy_out;
  SynthConfig sy_cfg;
  auto* sy = app.add_subcommand("synth-corpus", "generate the synthetic two-domain corpus");
  AddCommon(sy, &sy_opts);
  sy->add_option("--out", sy_out)->required();
  sy->add_option("--corpus-seed", sy_cfg.seed);
  sy->add_option("--target-train", sy_cfg.target_train);
  sy->add_option("--source-train", sy_cfg.source_train);
  sy->add_option("--source-dev", sy_cfg.source_dev);
  sy->add_option("--unsup-size", sy_cfg.unsup);

  CLI11_PARSE(app, argc, argv);

  try {
    if (fx->parsed()) {
      const Settings s = fx_opts.Resolve();
      const fs::path base = fs::path(fx_manifest).parent_path();
      fs::create_directories(fx_out_dir);
      std::vector<ManifestEntry> out;
      for (ManifestEntry e : ReadManifest(fx_manifest)) {
        Spectrogram spec;
        if (!e.audio_path.empty()) {
          const fs::path audio = fs::path(e.audio_path).is_absolute() ? fs::path(e.audio_path) : base / e.audio_path;
          const WavData wav = ReadWav(audio);
          if (wav.sample_rate != s.features.sample_rate)
            throw std::runtime_error(audio.string() + ": sample rate " + std::to_string(wav.sample_rate) +
                                     " does not match features.sample_rate");
          spec = LfbeExtract(wav.samples, s.features);
        } else {
          spec = ReadFeatureFile(fs::path(e.features_path).is_absolute() ? fs::path(e.features_path)
                                                                          : base / e.features_path);
        }
        const fs::path dst = fs::absolute(fs::path(fx_out_dir) / (e.id + ".lfbe"));
        WriteFeatureFile(dst, spec);
        e.audio_path.clear();
        e.features_path = dst.string();
        out.push_back(std::move(e));
      }
      WriteManifest(fx_out_manifest, out);
      std::fprintf(stderr, "wrote %zu feature files\n", out.size());
    } else if (tr->parsed()) {
      const Settings s = tr_opts.Resolve();
      ModelCheckpoint init;
      if (!tr_init.empty()) {
        init = LoadCheckpoint(tr_init);
      } else {
        if (tr_tokens.empty()) throw std::invalid_argument("train: --tokens is required without --init");
        init = InitFromSettings(s, LoadTokens(tr_tokens));
      }
      const auto train = LoadSet(tr_train, init.tokens, s);
      const auto dev = LoadSet(tr_dev, init.tokens, s);
      Finish(TrainSupervised(init, train, dev, s, std::nullopt, ProgressHooks(tr_opts)), tr_out, tr_record, tr_dev,
             s);
    } else if (ad->parsed()) {
      const Settings s = ad_opts.Resolve();
      const ModelCheckpoint pre = LoadCheckpoint(ad_pretrained);
      const TokenSet tokens = LoadTokens(ad_tokens);
      const auto train = LoadSet(ad_train, tokens, s);
      const auto dev = LoadSet(ad_dev, tokens, s);
      Finish(Adapt(pre, tokens, train, dev, ad_lin, s, ProgressHooks(ad_opts)), ad_out, ad_record, ad_dev, s);
    } else if (pl->parsed()) {
      const Settings s = pl_opts.Resolve();
      const ModelCheckpoint teacher = LoadCheckpoint(pl_teacher);
      const auto unsup = LoadSet(pl_unsup, teacher.tokens, s);
      const LabelSource source = ParseLabelSource(pl_source);
      std::optional<WordResources> words;
      if (source == LabelSource::kWordDecode) words = LoadWordResources(pl_lexicon, pl_lm, teacher.tokens);
      const PseudoLabelSet set = GeneratePseudoLabels(teacher, unsup, source, s, words ? &words->lexicon : nullptr,
                                                      words ? &words->lm : nullptr);
      WritePseudoLabels(pl_out, set, teacher.tokens);
      nlohmann::ordered_json j;
      j["labels"] = set.labels.size();
      j["skipped_empty"] = set.skipped_empty;
      j["skipped_oov"] = set.skipped_oov;
      PrintJson(j);
    } else if (ds->parsed()) {
      const Settings s = ds_opts.Resolve();
      const ModelCheckpoint student = LoadCheckpoint(ds_student);
      const auto train = LoadSet(ds_train, student.tokens, s);
      const auto unsup = LoadSet(ds_unsup, student.tokens, s);
      const auto dev = LoadSet(ds_dev, student.tokens, s);
      const auto labels = ReadPseudoLabels(ds_labels, student.tokens);
      Finish(TrainDistill(student, train, unsup, labels, dev, s, ProgressHooks(ds_opts)), ds_out, ds_record, ds_dev,
             s);
    } else if (st->parsed()) {
      const Settings s = st_opts.Resolve();
      const ModelCheckpoint init = LoadCheckpoint(st_init);
      const auto train = LoadSet(st_train, init.tokens, s);
      const auto unsup = LoadSet(st_unsup, init.tokens, s);
      const auto dev = LoadSet(st_dev, init.tokens, s);
      Finish(SelfTrain(init, train, unsup, dev, s, ProgressHooks(st_opts)), st_out, st_record, st_dev, s);
    } else if (dc->parsed()) {
      const Settings s = dc_opts.Resolve();
      const ModelCheckpoint model = LoadCheckpoint(dc_ckpt);
      std::optional<WordResources> words;
      if (dc_words) words = LoadWordResources(dc_lexicon, dc_lm, model.tokens);
      std::ofstream file;
      if (!dc_out.empty()) {
        file.open(dc_out, std::ios::binary);
        if (!file) throw std::runtime_error("cannot write " + dc_out);
      }
      std::ostream& out = dc_out.empty() ? std::cout : file;
      for (const auto& utt : LoadSet(dc_data, model.tokens, s)) {
        const Matrix logp = EvalPosteriors(model, utt, s);
        nlohmann::ordered_json j;
        j["id"] = utt.id;
        if (words) {
          const WordHypothesis h = WordBeamDecode(logp, words->lexicon, words->lm, s.decode, model.tokens.blank_index());
          std::string text;
          for (const auto& w : h.words) text += (text.empty() ? "" : " ") + w;
          j["words"] = text;
          j["log_score"] = h.log_score;
        } else {
          const Hypothesis h = PrefixBeamDecode(logp, s.decode.beam, model.tokens.blank_index()).front();
          j["phones"] = model.tokens.Decode(h.tokens);
          j["log_prob"] = h.log_prob;
        }
        out << j.dump() << "\n";
      }
    } else if (ev->parsed()) {
      const Settings s = ev_opts.Resolve();
      const ModelCheckpoint model = LoadCheckpoint(ev_ckpt);
      const auto data = LoadSet(ev_data, model.tokens, s);
      ErrorRate er;
      if (ev_metric == "wer") {
        const WordResources words = LoadWordResources(ev_lexicon, ev_lm, model.tokens);
        er = EvaluateWer(model, data, words.lexicon, words.lm, s);
      } else {
        er = EvaluatePer(model, data, s);
      }
      PrintJson(MetricJson(ev_metric, er.percent(), DatasetName(ev_data), ev_ckpt, ConfigHash(s)));
    } else if (sw->parsed()) {
      const Settings base = sw_opts.Resolve();
      fs::create_directories(sw_out_dir);
      std::vector<double> grid;
      if (sw_param == "learning_rate") grid = base.train.lr_grid;
      else if (sw_param == "adapt_learning_rate") grid = base.train.adapt_lr_grid;
      else if (sw_param == "dropout") grid = base.train.dropout_grid;
      else if (sw_param == "blank_prior") grid = base.blank_prior_grid;
      else grid = base.discount_grid;

      std::optional<ModelCheckpoint> init;
      if (!sw_init.empty()) init = LoadCheckpoint(sw_init);
      TokenSet tokens;
      if (!sw_tokens.empty()) tokens = LoadTokens(sw_tokens);
      else if (init) tokens = init->tokens;
      else throw std::invalid_argument("sweep: need --tokens or --init");
      const auto dev = LoadSet(sw_dev, tokens, base);

      double best_value = 0, best_metric = std::numeric_limits<double>::infinity();
      for (double v : grid) {
        Settings s = base;
        if (sw_param == "learning_rate") s.train.learning_rate = v;
        else if (sw_param == "adapt_learning_rate") s.train.adapt_learning_rate = v;
        else if (sw_param == "dropout") s.train.dropout_rate = v;
        else if (sw_param == "blank_prior") s.decode.blank_prior = v;
        else s.distill.discount = v;

        double metric = 0;
        std::string ckpt;
        if (sw_param == "blank_prior") {
          if (!init) throw std::invalid_argument("sweep blank_prior: --init checkpoint required");
          const WordResources words = LoadWordResources(sw_lexicon, sw_lm, tokens);
          metric = EvaluateWer(*init, dev, words.lexicon, words.lm, s).percent();
          ckpt = sw_init;
        } else {
          if (sw_train.empty()) throw std::invalid_argument("sweep: --train required");
          const auto train = LoadSet(sw_train, tokens, s);
          TrainResult r;
          if (sw_regime == "train") {
            r = TrainSupervised(init ? *init : InitFromSettings(s, tokens), train, dev, s);
          } else if (sw_regime == "distill") {
            if (!init || sw_unsup.empty() || sw_labels.empty())
              throw std::invalid_argument("sweep distill: --init, --unsup and --labels required");
            const auto unsup = LoadSet(sw_unsup, tokens, s);
            r = TrainDistill(*init, train, unsup, ReadPseudoLabels(sw_labels, tokens), dev, s);
          } else {
            if (!init) throw std::invalid_argument("sweep adapt: --init (pretrained) required");
            r = Adapt(*init, tokens, train, dev, sw_regime == "adapt_lin", s);
          }
          ckpt = (fs::path(sw_out_dir) / (sw_param + "_" + FormatNumber(v) + ".ckpt")).string();
          SaveCheckpoint(ckpt, r.model);
          WriteRecord(ckpt + ".record.json", r.record, ckpt);
          metric = r.record.best_dev_per;
        }
        auto j = MetricJson(sw_param == "blank_prior" ? "wer" : "dev_per", metric, DatasetName(sw_dev), ckpt,
                            ConfigHash(s));
        j["value"] = v;
        PrintJson(j);
        if (metric < best_metric) {
          best_metric = metric;
          best_value = v;
        }
      }
      nlohmann::ordered_json summary;
      summary["param"] = sw_param;
      summary["selected"] = best_value;
      summary["value_percent"] = best_metric;
      PrintJson(summary);
    } else if (sy->parsed()) {
      const Settings s = sy_opts.Resolve();
      sy_cfg.mel_bins = s.features.mel_bins;
      WriteCorpus(GenerateCorpus(sy_cfg), sy_out);
      std::fprintf(stderr, "corpus written to %s\n", sy_out.c_str());
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
