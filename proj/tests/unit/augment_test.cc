#include <cmath>

#include "doctest.h"
#include "lrasr/augment.h"

using namespace lrasr;

namespace {

Matrix Ramp(std::size_t frames, std::size_t channels) {
  Matrix m(frames, channels);
  for (std::size_t t = 0; t < frames; ++t)
    for (std::size_t c = 0; c < channels; ++c) m(t, c) = 1.0 + static_cast<double>(t * channels + c);
  return m;
}

bool Inside(const MaskRegion& r, std::size_t t, std::size_t c) {
  return (t >= r.time_start && t < r.time_start + r.time_width) ||
         (c >= r.freq_start && c < r.freq_start + r.freq_width);
}

}  // namespace

TEST_CASE("speed factor 1.0 is the identity") {
  for (std::size_t frames = 1; frames <= 60; ++frames) {
    const Matrix m = Ramp(frames, 5);
    CHECK(SpeedPerturb(m, 1.0) == m);
  }
}

TEST_CASE("speed perturbed lengths round T over factor") {
  for (double factor : {0.9, 1.0, 1.1, 0.8, 1.25}) {
    for (std::size_t frames = 1; frames <= 100; ++frames) {
      const auto expected = std::max<long long>(1, std::llround(static_cast<double>(frames) / factor));
      CHECK(SpeedPerturb(Ramp(frames, 2), factor).rows() == static_cast<std::size_t>(expected));
    }
  }
  // 10 / 1.1 = 9.09 -> 9; 10 / 0.9 = 11.1 -> 11
  CHECK(SpeedPerturbedLength(10, 1.1) == 9);
  CHECK(SpeedPerturbedLength(10, 0.9) == 11);
  CHECK_THROWS(SpeedPerturbedLength(10, 0.0));
}

TEST_CASE("speed perturbation interpolates linearly between endpoints") {
  Matrix m(3, 1, {0.0, 10.0, 20.0});
  const Matrix out = SpeedPerturb(m, 0.6);  // 5 frames
  REQUIRE(out.rows() == 5);
  CHECK(out == Matrix(5, 1, {0.0, 5.0, 10.0, 15.0, 20.0}));
}

TEST_CASE("mask zeroes exactly its rectangles") {
  const Matrix m = Ramp(20, 10);
  const MaskRegion r{2, 3, 7, 4};  // channels 2..4, frames 7..10
  const Matrix out = ApplyMask(m, r);
  for (std::size_t t = 0; t < 20; ++t)
    for (std::size_t c = 0; c < 10; ++c) {
      if (Inside(r, t, c))
        CHECK(out(t, c) == 0.0);
      else
        CHECK(out(t, c) == m(t, c));
    }
}

TEST_CASE("drawn masks stay in bounds and match their footprint") {
  AugmentConfig cfg;
  Rng rng(17);
  for (int i = 0; i < 500; ++i) {
    const auto frames = static_cast<std::size_t>(rng.UniformInt(1, 40));
    const Matrix m = Ramp(frames, 12);
    Rng draw(static_cast<std::uint64_t>(i));
    const MaskRegion r = DrawMask(frames, 12, cfg, draw);
    REQUIRE(r.freq_width <= 8);
    REQUIRE(r.freq_start + r.freq_width <= 12);
    REQUIRE(r.time_width <= std::min<std::size_t>(16, frames));
    REQUIRE(r.time_start + r.time_width <= frames);

    Rng again(static_cast<std::uint64_t>(i));
    const Matrix out = SpecMask(m, cfg, again);
    std::size_t zeros = 0, expected = 0;
    for (std::size_t t = 0; t < frames; ++t)
      for (std::size_t c = 0; c < 12; ++c) {
        zeros += out(t, c) == 0.0;
        expected += Inside(r, t, c);
      }
    CHECK(zeros == expected);
  }
}

TEST_CASE("mask draw order is f, f0, t, t0") {
  AugmentConfig cfg;
  Rng a(123), b(123);
  const MaskRegion r = DrawMask(50, 40, cfg, a);
  const auto f = static_cast<std::size_t>(b.UniformInt(0, 8));
  const auto f0 = static_cast<std::size_t>(b.UniformInt(0, static_cast<std::int64_t>(40 - f)));
  const auto t = static_cast<std::size_t>(b.UniformInt(0, 16));
  const auto t0 = static_cast<std::size_t>(b.UniformInt(0, static_cast<std::int64_t>(50 - t)));
  CHECK(r.freq_width == f);
  CHECK(r.freq_start == f0);
  CHECK(r.time_width == t);
  CHECK(r.time_start == t0);
}

TEST_CASE("masking is applied to half of the draws") {
  AugmentConfig cfg;
  Utterance u{"u", "s", Ramp(30, 8), LabelSeq{1, 2}, true, {}};
  std::size_t masked = 0;
  const int draws = 10000;
  for (int i = 0; i < draws; ++i) {
    Rng rng(DeriveSeed(5, "mask-rate", static_cast<std::uint64_t>(i)));
    AugmentTrace trace;
    const Utterance out = AugmentUtterance(u, cfg, rng, &trace);
    masked += trace.masked;
    CHECK(out.transcript == u.transcript);
    CHECK(out.features.rows() == SpeedPerturbedLength(30, trace.speed_factor));
  }
  const double rate = static_cast<double>(masked) / draws;
  CHECK(rate > 0.48);
  CHECK(rate < 0.52);
}

TEST_CASE("disabled augmentation is a no-op but still counted") {
  AugmentConfig cfg;
  cfg.enabled = false;
  Utterance u{"u", "s", Ramp(10, 4), {}, false, {}};
  Rng rng(1);
  const auto before = AugmentCallCount();
  CHECK(AugmentUtterance(u, cfg, rng).features == u.features);
  CHECK(AugmentCallCount() == before + 1);
  Rng fresh(1);
  CHECK(rng.NextU64() == fresh.NextU64());
}

TEST_CASE("augment config validation") {
  AugmentConfig cfg;
  CHECK_NOTHROW(cfg.Validate(40));
  cfg.freq_mask_max = 41;
  CHECK_THROWS(cfg.Validate(40));
  cfg = {};
  cfg.apply_prob = 1.5;
  CHECK_THROWS(cfg.Validate(40));
  cfg = {};
  cfg.speed_factors = {};
  CHECK_THROWS(cfg.Validate(40));
}
