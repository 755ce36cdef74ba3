// augment.cc

#include "lrasr/augment.h"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <stdexcept>

namespace lrasr {

namespace {
std::atomic<std::uint64_t> g_augment_calls{0};
}  // namespace

void AugmentConfig::Validate(int mel_bins) const {
  if (speed_factors.empty()) throw std::invalid_argument("augment: speed_factors is empty");
  for (double f : speed_factors)
    if (!(f > 0)) throw std::invalid_argument("augment: speed factors must be > 0");
  if (freq_mask_max < 0 || freq_mask_max > mel_bins)
    throw std::invalid_argument("augment: freq_mask_max must lie in [0, mel_bins]");
  if (time_mask_max < 0) throw std::invalid_argument("augment: time_mask_max must be >= 0");
  if (!(apply_prob >= 0 && apply_prob <= 1))
    throw std::invalid_argument("augment: apply_prob must lie in [0, 1]");
}

std::size_t SpeedPerturbedLength(std::size_t frames, double factor) {
  if (!(factor > 0)) throw std::invalid_argument("SpeedPerturb: factor must be > 0");
  const auto len = static_cast<std::size_t>(std::llround(static_cast<double>(frames) / factor));
  return std::max<std::size_t>(len, 1);
}

Spectrogram SpeedPerturb(const Spectrogram& spec, double factor) {
  const std::size_t in_len = spec.rows();
  if (in_len == 0) throw std::invalid_argument("SpeedPerturb: empty spectrogram");
  const std::size_t out_len = SpeedPerturbedLength(in_len, factor);
  Spectrogram out(out_len, spec.cols());
  for (std::size_t t = 0; t < out_len; ++t) {
    const double pos = out_len == 1
                           ? (static_cast<double>(in_len) - 1.0) / 2.0
                           : static_cast<double>(t) * static_cast<double>(in_len - 1) /
                                 static_cast<double>(out_len - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const double frac = pos - static_cast<double>(lo);
    auto dst = out.row(t);
    if (frac == 0.0 || lo + 1 >= in_len) {
      auto src = spec.row(std::min(lo, in_len - 1));
      std::copy(src.begin(), src.end(), dst.begin());
      continue;
    }
    auto a = spec.row(lo);
    auto b = spec.row(lo + 1);
    for (std::size_t c = 0; c < dst.size(); ++c) dst[c] = (1.0 - frac) * a[c] + frac * b[c];
  }
  return out;
}

MaskRegion DrawMask(std::size_t frames, std::size_t channels, const AugmentConfig& cfg, Rng& rng) {
  MaskRegion r;
  const auto f_max = std::min<std::int64_t>(cfg.freq_mask_max, static_cast<std::int64_t>(channels));
  r.freq_width = static_cast<std::size_t>(rng.UniformInt(0, f_max));
  r.freq_start = static_cast<std::size_t>(
      rng.UniformInt(0, static_cast<std::int64_t>(channels - r.freq_width)));
  const auto t_max = std::min<std::int64_t>(cfg.time_mask_max, static_cast<std::int64_t>(frames));
  r.time_width = static_cast<std::size_t>(rng.UniformInt(0, t_max));
  r.time_start = static_cast<std::size_t>(
      rng.UniformInt(0, static_cast<std::int64_t>(frames - r.time_width)));
  return r;
}

Spectrogram ApplyMask(const Spectrogram& spec, const MaskRegion& region) {
  Spectrogram out = spec;
  for (std::size_t t = 0; t < out.rows(); ++t) {
    auto row = out.row(t);
    if (t >= region.time_start && t < region.time_start + region.time_width) {
      std::fill(row.begin(), row.end(), 0.0);
      continue;
    }
    for (std::size_t c = region.freq_start; c < region.freq_start + region.freq_width; ++c)
      row[c] = 0.0;
  }
  return out;
}

Spectrogram SpecMask(const Spectrogram& spec, const AugmentConfig& cfg, Rng& rng) {
  return ApplyMask(spec, DrawMask(spec.rows(), spec.cols(), cfg, rng));
}

Utterance AugmentUtterance(const Utterance& utt, const AugmentConfig& cfg, Rng& rng,
                           AugmentTrace* trace) {
  g_augment_calls.fetch_add(1, std::memory_order_relaxed);
  AugmentTrace local;
  if (!cfg.enabled) {
    if (trace) *trace = local;
    return utt;
  }
  Utterance out = utt;
  const auto pick = rng.UniformInt(0, static_cast<std::int64_t>(cfg.speed_factors.size()) - 1);
  local.speed_factor = cfg.speed_factors[static_cast<std::size_t>(pick)];
  out.features = SpeedPerturb(utt.features, local.speed_factor);
  if (rng.Bernoulli(cfg.apply_prob)) {
    local.masked = true;
    local.mask = DrawMask(out.features.rows(), out.features.cols(), cfg, rng);
    out.features = ApplyMask(out.features, local.mask);
  }
  if (trace) *trace = local;
  return out;
}

std::uint64_t AugmentCallCount() { return g_augment_calls.load(std::memory_order_relaxed); }

}  // namespace lrasr
