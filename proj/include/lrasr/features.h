// lrasr/features.h
//
// Log mel filterbank energies (LFBE), per-speaker mean normalization, frame
// stacking, and the on-disk formats for audio, feature files and manifests.

#ifndef LRASR_FEATURES_H_
#define LRASR_FEATURES_H_

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lrasr/core_math.h"
#include "lrasr/ctc.h"

namespace lrasr {

// time x mel-channel matrix of log energies.
using Spectrogram = Matrix;

struct FeatureConfig {
  int sample_rate = 16000;
  double window_ms = 25.0;
  double hop_ms = 10.0;
  int mel_bins = 40;
  int stack_size = 3;
  int eval_stack_offset = 0;
  int fft_size = 512;
  double low_freq = 20.0;

  void Validate() const;
  int WindowSamples() const;
  int HopSamples() const;
  int StackedDim() const { return stack_size * mel_bins; }
};

struct Utterance {
  std::string id;
  std::string speaker;
  Spectrogram features;              // raw (unstacked) frames
  std::optional<LabelSeq> transcript;
  bool is_supervised = false;
  // Word-level reference, used only for WER scoring.
  std::optional<std::vector<std::string>> words;
};

// Energy floor applied before the log.
inline constexpr double kEnergyFloor = 1e-10;

double HzToMel(double hz);
double MelToHz(double mel);
// Center frequencies (Hz) of the triangular mel filters.
std::vector<double> MelCenterFrequencies(const FeatureConfig& cfg);

Spectrogram LfbeExtract(std::span<const std::int16_t> pcm, const FeatureConfig& cfg);

// Subtracts, per speaker, the per-channel mean over all of that speaker's
// frames. Statistics never cross speakers.
std::vector<Utterance> SpeakerMeanNormalize(std::vector<Utterance> utterances);

// Concatenates stack_size consecutive frames starting at `offset`. An input
// too short for one full stack yields one stacked frame padded by repeating
// the final frame.
Spectrogram StackFrames(const Spectrogram& spec, int offset, const FeatureConfig& cfg);

// --- file formats -------------------------------------------------------

struct WavData {
  int sample_rate = 0;
  std::vector<std::int16_t> samples;
};

// PCM 16-bit little-endian mono WAV.
WavData ReadWav(const std::filesystem::path& path);
void WriteWav(const std::filesystem::path& path, const WavData& wav);

// Binary feature file: "LFBE", u32 T, u32 dim, T*dim float32, little-endian.
Spectrogram ReadFeatureFile(const std::filesystem::path& path);
void WriteFeatureFile(const std::filesystem::path& path, const Spectrogram& spec);

struct ManifestEntry {
  std::string id;
  std::string speaker;
  std::string audio_path;
  std::string features_path;
  std::optional<std::string> transcript;  // space-separated token strings
  std::optional<std::string> words;       // space-separated reference words
};

// JSON Lines; relative paths resolve against the manifest's directory.
std::vector<ManifestEntry> ReadManifest(const std::filesystem::path& path);
void WriteManifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries);

// Loads the features named by each entry (extracting from audio when only
// audio_path is given) and encodes transcripts with `tokens`.
std::vector<Utterance> LoadUtterances(const std::filesystem::path& manifest_path,
                                      const TokenSet& tokens, const FeatureConfig& cfg);

}  // namespace lrasr

#endif  // LRASR_FEATURES_H_
