// features.cc

#include "lrasr/features.h"

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace lrasr {

void FeatureConfig::Validate() const {
  if (!(window_ms > hop_ms && hop_ms > 0))
    throw std::invalid_argument("FeatureConfig: need window_ms > hop_ms > 0");
  if (mel_bins < 1) throw std::invalid_argument("FeatureConfig: mel_bins must be >= 1");
  if (stack_size < 1) throw std::invalid_argument("FeatureConfig: stack_size must be >= 1");
  if (sample_rate <= 0) throw std::invalid_argument("FeatureConfig: bad sample_rate");
  if (fft_size < WindowSamples() || (fft_size & (fft_size - 1)) != 0)
    throw std::invalid_argument("FeatureConfig: fft_size must be a power of two >= window");
}

int FeatureConfig::WindowSamples() const {
  return static_cast<int>(std::lround(sample_rate * window_ms / 1000.0));
}

int FeatureConfig::HopSamples() const {
  return static_cast<int>(std::lround(sample_rate * hop_ms / 1000.0));
}

double HzToMel(double hz) { return 1127.0 * std::log1p(hz / 700.0); }
double MelToHz(double mel) { return 700.0 * (std::exp(mel / 1127.0) - 1.0); }

namespace {

// Mel-scale break points: mel_bins + 2 equally spaced values.
std::vector<double> MelBreakPoints(const FeatureConfig& cfg) {
  const double lo = HzToMel(cfg.low_freq);
  const double hi = HzToMel(cfg.sample_rate / 2.0);
  std::vector<double> points(static_cast<std::size_t>(cfg.mel_bins) + 2);
  const double delta = (hi - lo) / (cfg.mel_bins + 1);
  for (std::size_t i = 0; i < points.size(); ++i) points[i] = lo + delta * static_cast<double>(i);
  return points;
}

// In-place iterative radix-2 FFT.
void Fft(std::vector<std::complex<double>>* buf) {
  auto& a = *buf;
  const std::size_t n = a.size();
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double angle = -2.0 * M_PI / static_cast<double>(len);
    const std::complex<double> step(std::cos(angle), std::sin(angle));
    for (std::size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (std::size_t k = 0; k < len / 2; ++k) {
        const auto u = a[i + k];
        const auto v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
        w *= step;
      }
    }
  }
}

// mel_bins x (fft_size/2 + 1) triangular weights.
Matrix MelFilterBank(const FeatureConfig& cfg) {
  const auto points = MelBreakPoints(cfg);
  const std::size_t num_fft_bins = static_cast<std::size_t>(cfg.fft_size) / 2 + 1;
  Matrix bank(static_cast<std::size_t>(cfg.mel_bins), num_fft_bins);
  for (std::size_t m = 0; m < bank.rows(); ++m) {
    const double left = points[m], center = points[m + 1], right = points[m + 2];
    for (std::size_t k = 0; k < num_fft_bins; ++k) {
      const double mel = HzToMel(static_cast<double>(k) * cfg.sample_rate / cfg.fft_size);
      if (mel <= left || mel >= right) continue;
      bank(m, k) = mel <= center ? (mel - left) / (center - left) : (right - mel) / (right - center);
    }
  }
  return bank;
}

}  // namespace

std::vector<double> MelCenterFrequencies(const FeatureConfig& cfg) {
  const auto points = MelBreakPoints(cfg);
  std::vector<double> centers;
  for (int m = 0; m < cfg.mel_bins; ++m) centers.push_back(MelToHz(points[m + 1]));
  return centers;
}

Spectrogram LfbeExtract(std::span<const std::int16_t> pcm, const FeatureConfig& cfg) {
  cfg.Validate();
  const std::size_t window = static_cast<std::size_t>(cfg.WindowSamples());
  const std::size_t hop = static_cast<std::size_t>(cfg.HopSamples());
  if (pcm.size() < window)
    throw std::invalid_argument("LfbeExtract: " + std::to_string(pcm.size()) +
                                " samples is shorter than one window of " +
                                std::to_string(window));
  const std::size_t num_frames = 1 + (pcm.size() - window) / hop;
  const Matrix bank = MelFilterBank(cfg);

  std::vector<double> hann(window);
  for (std::size_t n = 0; n < window; ++n)
    hann[n] = 0.5 - 0.5 * std::cos(2.0 * M_PI * static_cast<double>(n) / (window - 1));

  Spectrogram out(num_frames, static_cast<std::size_t>(cfg.mel_bins));
  std::vector<std::complex<double>> buf(static_cast<std::size_t>(cfg.fft_size));
  std::vector<double> power(bank.cols());
  for (std::size_t f = 0; f < num_frames; ++f) {
    std::fill(buf.begin(), buf.end(), std::complex<double>(0.0, 0.0));
    for (std::size_t n = 0; n < window; ++n) buf[n] = pcm[f * hop + n] * hann[n];
    Fft(&buf);
    for (std::size_t k = 0; k < power.size(); ++k) power[k] = std::norm(buf[k]);
    for (std::size_t m = 0; m < bank.rows(); ++m) {
      double energy = 0.0;
      auto weights = bank.row(m);
      for (std::size_t k = 0; k < power.size(); ++k) energy += weights[k] * power[k];
      out(f, m) = std::log(std::max(energy, kEnergyFloor));
    }
  }
  return out;
}

std::vector<Utterance> SpeakerMeanNormalize(std::vector<Utterance> utterances) {
  if (utterances.empty()) throw std::invalid_argument("SpeakerMeanNormalize: no utterances");
  struct Stats {
    std::vector<double> sum;
    std::size_t frames = 0;
  };
  std::map<std::string, Stats> stats;
  for (const auto& utt : utterances) {
    if (utt.speaker.empty())
      throw std::invalid_argument("SpeakerMeanNormalize: utterance '" + utt.id +
                                  "' has no speaker");
    auto& s = stats[utt.speaker];
    if (s.sum.empty()) s.sum.assign(utt.features.cols(), 0.0);
    if (s.sum.size() != utt.features.cols())
      throw std::invalid_argument("SpeakerMeanNormalize: inconsistent feature dims for speaker " +
                                  utt.speaker);
    for (std::size_t t = 0; t < utt.features.rows(); ++t) {
      auto row = utt.features.row(t);
      for (std::size_t c = 0; c < row.size(); ++c) s.sum[c] += row[c];
    }
    s.frames += utt.features.rows();
  }
  for (auto& utt : utterances) {
    const auto& s = stats.at(utt.speaker);
    if (s.frames == 0) continue;
    for (std::size_t t = 0; t < utt.features.rows(); ++t) {
      auto row = utt.features.row(t);
      for (std::size_t c = 0; c < row.size(); ++c)
        row[c] -= s.sum[c] / static_cast<double>(s.frames);
    }
  }
  return utterances;
}

Spectrogram StackFrames(const Spectrogram& spec, int offset, const FeatureConfig& cfg) {
  if (offset < 0 || offset >= cfg.stack_size)
    throw std::invalid_argument("StackFrames: offset must lie in [0, stack_size)");
  if (spec.rows() == 0) throw std::invalid_argument("StackFrames: empty spectrogram");
  const std::size_t k = static_cast<std::size_t>(cfg.stack_size);
  const std::size_t total = spec.rows();
  const std::size_t start = static_cast<std::size_t>(offset);
  std::size_t count = total > start ? (total - start) / k : 0;
  count = std::max<std::size_t>(count, 1);
  const std::size_t dim = spec.cols();
  Spectrogram out(count, k * dim);
  for (std::size_t i = 0; i < count; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      const std::size_t src = std::min(start + i * k + j, total - 1);
      auto from = spec.row(src);
      std::copy(from.begin(), from.end(), out.row(i).begin() + static_cast<std::ptrdiff_t>(j * dim));
    }
  }
  return out;
}

// --- file formats -------------------------------------------------------

namespace {

std::uint32_t ReadU32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
         static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
}

std::uint16_t ReadU16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | p[1] << 8);
}

void PutU32(std::string* out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out->push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void PutU16(std::string* out, std::uint16_t v) {
  out->push_back(static_cast<char>(v & 0xff));
  out->push_back(static_cast<char>(v >> 8));
}

std::string ReadAll(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return std::string(std::istreambuf_iterator<char>(in), {});
}

void WriteAll(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

}  // namespace

WavData ReadWav(const std::filesystem::path& path) {
  const std::string bytes = ReadAll(path);
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  if (bytes.size() < 12 || std::memcmp(p, "RIFF", 4) != 0 || std::memcmp(p + 8, "WAVE", 4) != 0)
    throw std::runtime_error(path.string() + ": not a RIFF/WAVE file");
  WavData wav;
  bool have_fmt = false;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const std::uint32_t chunk_size = ReadU32(p + pos + 4);
    const std::size_t body = pos + 8;
    if (body + chunk_size > bytes.size())
      throw std::runtime_error(path.string() + ": truncated chunk");
    if (std::memcmp(p + pos, "fmt ", 4) == 0) {
      if (chunk_size < 16) throw std::runtime_error(path.string() + ": bad fmt chunk");
      const std::uint16_t format = ReadU16(p + body);
      const std::uint16_t channels = ReadU16(p + body + 2);
      wav.sample_rate = static_cast<int>(ReadU32(p + body + 4));
      const std::uint16_t bits = ReadU16(p + body + 14);
      if (format != 1 || bits != 16)
        throw std::runtime_error(path.string() + ": only 16-bit PCM is supported");
      if (channels != 1)
        throw std::runtime_error(path.string() + ": expected mono audio, got " +
                                 std::to_string(channels) + " channels");
      have_fmt = true;
    } else if (std::memcmp(p + pos, "data", 4) == 0) {
      if (!have_fmt) throw std::runtime_error(path.string() + ": data chunk before fmt");
      wav.samples.resize(chunk_size / 2);
      for (std::size_t i = 0; i < wav.samples.size(); ++i)
        wav.samples[i] = static_cast<std::int16_t>(ReadU16(p + body + 2 * i));
      return wav;
    }
    pos = body + chunk_size + (chunk_size & 1);
  }
  throw std::runtime_error(path.string() + ": no data chunk");
}

void WriteWav(const std::filesystem::path& path, const WavData& wav) {
  std::string out = "RIFF";
  const std::uint32_t data_bytes = static_cast<std::uint32_t>(wav.samples.size() * 2);
  PutU32(&out, 36 + data_bytes);
  out += "WAVEfmt ";
  PutU32(&out, 16);
  PutU16(&out, 1);
  PutU16(&out, 1);
  PutU32(&out, static_cast<std::uint32_t>(wav.sample_rate));
  PutU32(&out, static_cast<std::uint32_t>(wav.sample_rate * 2));
  PutU16(&out, 2);
  PutU16(&out, 16);
  out += "data";
  PutU32(&out, data_bytes);
  for (std::int16_t s : wav.samples) PutU16(&out, static_cast<std::uint16_t>(s));
  WriteAll(path, out);
}

Spectrogram ReadFeatureFile(const std::filesystem::path& path) {
  const std::string bytes = ReadAll(path);
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  if (bytes.size() < 12 || std::memcmp(p, "LFBE", 4) != 0)
    throw std::runtime_error(path.string() + ": missing LFBE header");
  const std::uint32_t frames = ReadU32(p + 4);
  const std::uint32_t dim = ReadU32(p + 8);
  const std::size_t expected = 12 + static_cast<std::size_t>(frames) * dim * 4;
  if (bytes.size() != expected)
    throw std::runtime_error(path.string() + ": size " + std::to_string(bytes.size()) +
                             " does not match header (" + std::to_string(expected) + ")");
  Spectrogram spec(frames, dim);
  for (std::size_t i = 0; i < spec.size(); ++i) {
    const std::uint32_t bits = ReadU32(p + 12 + 4 * i);
    float value;
    std::memcpy(&value, &bits, sizeof value);
    spec.data()[i] = value;
  }
  return spec;
}

void WriteFeatureFile(const std::filesystem::path& path, const Spectrogram& spec) {
  std::string out = "LFBE";
  PutU32(&out, static_cast<std::uint32_t>(spec.rows()));
  PutU32(&out, static_cast<std::uint32_t>(spec.cols()));
  for (double v : spec.data()) {
    const float f = static_cast<float>(v);
    std::uint32_t bits;
    std::memcpy(&bits, &f, sizeof bits);
    PutU32(&out, bits);
  }
  WriteAll(path, out);
}

std::vector<ManifestEntry> ReadManifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open manifest " + path.string());
  std::vector<ManifestEntry> entries;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
    ManifestEntry e;
    e.id = j.at("id").get<std::string>();
    e.speaker = j.value("speaker", std::string());
    e.audio_path = j.value("audio_path", std::string());
    e.features_path = j.value("features_path", std::string());
    if (e.audio_path.empty() == e.features_path.empty())
      throw std::runtime_error(path.string() + ":" + std::to_string(line_no) +
                               ": exactly one of audio_path/features_path is required");
    if (j.contains("transcript") && !j["transcript"].is_null())
      e.transcript = j["transcript"].get<std::string>();
    if (j.contains("words") && !j["words"].is_null()) e.words = j["words"].get<std::string>();
    entries.push_back(std::move(e));
  }
  return entries;
}

void WriteManifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries) {
  std::string out;
  for (const auto& e : entries) {
    nlohmann::ordered_json j;
    j["id"] = e.id;
    j["speaker"] = e.speaker;
    if (!e.audio_path.empty()) j["audio_path"] = e.audio_path;
    if (!e.features_path.empty()) j["features_path"] = e.features_path;
    if (e.transcript) j["transcript"] = *e.transcript;
    if (e.words) j["words"] = *e.words;
    out += j.dump() + "\n";
  }
  WriteAll(path, out);
}

std::vector<Utterance> LoadUtterances(const std::filesystem::path& manifest_path,
                                      const TokenSet& tokens, const FeatureConfig& cfg) {
  const auto base = manifest_path.parent_path();
  auto resolve = [&](const std::string& p) {
    std::filesystem::path path(p);
    return path.is_relative() ? base / path : path;
  };
  std::vector<Utterance> out;
  for (const auto& e : ReadManifest(manifest_path)) {
    Utterance utt;
    utt.id = e.id;
    utt.speaker = e.speaker;
    if (!e.features_path.empty()) {
      utt.features = ReadFeatureFile(resolve(e.features_path));
    } else {
      const WavData wav = ReadWav(resolve(e.audio_path));
      if (wav.sample_rate != cfg.sample_rate)
        throw std::runtime_error(e.audio_path + ": sample rate " + std::to_string(wav.sample_rate) +
                                 " differs from configured " + std::to_string(cfg.sample_rate));
      utt.features = LfbeExtract(wav.samples, cfg);
    }
    if (utt.features.rows() == 0) throw std::runtime_error(e.id + ": zero-length features");
    if (e.transcript) {
      utt.transcript = tokens.Encode(*e.transcript);
      utt.is_supervised = true;
    }
    if (e.words) {
      std::istringstream in(*e.words);
      std::vector<std::string> words;
      for (std::string w; in >> w;) words.push_back(w);
      utt.words = std::move(words);
    }
    out.push_back(std::move(utt));
  }
  return out;
}

}  // namespace lrasr
