// lrasr/augment.h
//
// On-the-fly spectrogram augmentation: time-axis speed perturbation by
// linear interpolation and zero masking of a channel band and a time span.
// Augmentation acts on raw frames, before stacking.

#ifndef LRASR_AUGMENT_H_
#define LRASR_AUGMENT_H_

#include <cstdint>
#include <vector>

#include "lrasr/core_math.h"
#include "lrasr/features.h"

namespace lrasr {

struct AugmentConfig {
  std::vector<double> speed_factors{0.9, 1.0, 1.1};
  int freq_mask_max = 8;
  int time_mask_max = 16;
  double apply_prob = 0.5;
  bool enabled = true;

  void Validate(int mel_bins) const;
};

// Resizes the time axis to round(T / factor) frames.
Spectrogram SpeedPerturb(const Spectrogram& spec, double factor);
std::size_t SpeedPerturbedLength(std::size_t frames, double factor);

struct MaskRegion {
  std::size_t freq_start = 0;
  std::size_t freq_width = 0;
  std::size_t time_start = 0;
  std::size_t time_width = 0;
};

// Draws f, f0, t, t0 in that order.
MaskRegion DrawMask(std::size_t frames, std::size_t channels, const AugmentConfig& cfg, Rng& rng);
Spectrogram ApplyMask(const Spectrogram& spec, const MaskRegion& region);
Spectrogram SpecMask(const Spectrogram& spec, const AugmentConfig& cfg, Rng& rng);

struct AugmentTrace {
  double speed_factor = 1.0;
  bool masked = false;
  MaskRegion mask;
};

// Speed perturbation with a uniformly drawn factor, then masking with
// probability apply_prob (one joint gate for both masks). Disabled configs
// return the input unchanged. The transcript is carried over untouched.
Utterance AugmentUtterance(const Utterance& utt, const AugmentConfig& cfg, Rng& rng,
                           AugmentTrace* trace = nullptr);

// Number of AugmentUtterance calls in this process; used by tests to show
// that evaluation never augments.
std::uint64_t AugmentCallCount();

}  // namespace lrasr

#endif  // LRASR_AUGMENT_H_
