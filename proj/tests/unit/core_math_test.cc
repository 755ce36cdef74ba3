#include <cmath>
#include <numeric>

#include "doctest.h"
#include "lrasr/core_math.h"

using namespace lrasr;

TEST_CASE("matmul variants agree with naive loops") {
  Rng rng(3);
  Matrix a(3, 4), b(4, 2), bt(2, 4);
  for (double& v : a.data()) v = rng.Uniform(-1, 1);
  for (double& v : b.data()) v = rng.Uniform(-1, 1);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 2; ++j) bt(j, i) = b(i, j);

  Matrix c(3, 2), c2(3, 2);
  MatMulAdd(a, b, &c);
  MatMulTransposeAdd(a, bt, &c2);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 2; ++j) {
      double s = 0;
      for (std::size_t k = 0; k < 4; ++k) s += a(i, k) * b(k, j);
      CHECK(c(i, j) == doctest::Approx(s).epsilon(1e-14));
      CHECK(c2(i, j) == doctest::Approx(s).epsilon(1e-14));
    }

  // a^T * c -> 4 x 2
  Matrix d(4, 2);
  MatTransposeMulAdd(a, c, &d);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 2; ++j) {
      double s = 0;
      for (std::size_t k = 0; k < 3; ++k) s += a(k, i) * c(k, j);
      CHECK(d(i, j) == doctest::Approx(s).epsilon(1e-14));
    }
}

TEST_CASE("log-sum-exp and log-softmax") {
  CHECK(LogSumExp(kLogZero, kLogZero) == kLogZero);
  CHECK(LogSumExp(kLogZero, 1.5) == 1.5);
  CHECK(LogSumExp(std::log(2.0), std::log(3.0)) == doctest::Approx(std::log(5.0)));
  // Large magnitudes do not overflow.
  CHECK(LogSumExp(1000.0, 1000.0) == doctest::Approx(1000.0 + std::log(2.0)));

  const std::vector<double> logits{1.0, 2.0, 3.0};
  const auto ls = LogSoftmax(logits);
  // log(e^1 / (e^1 + e^2 + e^3))
  CHECK(ls[0] == doctest::Approx(-2.40760596444438).epsilon(1e-12));
  CHECK(ls[2] == doctest::Approx(-0.40760596444438).epsilon(1e-12));
  double total = 0;
  for (double v : ls) total += std::exp(v);
  CHECK(total == doctest::Approx(1.0).epsilon(1e-14));

  const auto shifted = LogSoftmax(std::vector<double>{1001.0, 1002.0, 1003.0});
  for (std::size_t i = 0; i < 3; ++i) CHECK(shifted[i] == doctest::Approx(ls[i]).epsilon(1e-12));
}

TEST_CASE("adam single step matches closed form") {
  // Hand computation: m = 0.1 g, v = 0.001 g^2, bias correction gives
  // m_hat = g, v_hat = g^2, so the first step moves every entry by
  // lr * g / (|g| + eps) ~= lr * sign(g).
  Matrix p(1, 2, {0.5, 0.5});
  AdamState st(p, 0.1);
  AdamStep(Matrix(1, 2, {1.0, -0.5}), &st, &p);
  CHECK(p(0, 0) == doctest::Approx(0.5 - 0.1 * 1.0 / (1.0 + 1e-8)).epsilon(1e-15));
  CHECK(p(0, 1) == doctest::Approx(0.5 + 0.1 * 0.5 / (0.5 + 1e-8)).epsilon(1e-15));

  // Second step with grad -0.5 on entry 0, reference from an independent script.
  AdamStep(Matrix(1, 2, {-0.5, 0.0}), &st, &p);
  CHECK(p(0, 0) == doctest::Approx(0.37336629737090316).epsilon(1e-12));
  CHECK(st.step_count == 2);
}

TEST_CASE("dropout is inverted and identity in eval mode") {
  Rng rng(11);
  Matrix x(50, 40);
  x.Fill(1.0);
  Matrix mask;
  const Matrix y = DropoutApply(x, 0.25, rng, true, &mask);
  std::size_t zeros = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double v = y.data()[i];
    CHECK((v == 0.0 || v == doctest::Approx(1.0 / 0.75)));
    CHECK(mask.data()[i] == v);
    zeros += v == 0.0;
  }
  const double rate = static_cast<double>(zeros) / static_cast<double>(y.size());
  CHECK(rate == doctest::Approx(0.25).epsilon(0.15));

  Rng other(11);
  CHECK(DropoutApply(x, 0.25, other, false) == x);
  CHECK(DropoutApply(x, 0.0, other, true) == x);
}

TEST_CASE("rng streams are reproducible and distinct") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.NextU64() == b.NextU64());

  CHECK(DeriveSeed(1, "x", 2, 3) == DeriveSeed(1, "x", 2, 3));
  CHECK(DeriveSeed(1, "x", 2, 3) != DeriveSeed(1, "x", 3, 2));
  CHECK(DeriveSeed(1, "x") != DeriveSeed(1, "y"));
  CHECK(DeriveSeed(1, "x") != DeriveSeed(2, "x"));

  Rng r(5);
  std::vector<int> counts(4, 0);
  for (int i = 0; i < 4000; ++i) {
    const auto v = r.UniformInt(0, 3);
    REQUIRE(v >= 0);
    REQUIRE(v <= 3);
    ++counts[static_cast<std::size_t>(v)];
  }
  for (int c : counts) CHECK(c > 850);

  std::vector<int> items(10);
  std::iota(items.begin(), items.end(), 0);
  r.Shuffle(&items);
  std::vector<int> sorted = items;
  std::sort(sorted.begin(), sorted.end());
  for (int i = 0; i < 10; ++i) CHECK(sorted[static_cast<std::size_t>(i)] == i);
}

TEST_CASE("fnv-1a reference values") {
  CHECK(Fnv1a64("") == 0xcbf29ce484222325ULL);
  CHECK(Fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
  CHECK(Fnv1a64("foobar") == 0x85944171f73967e8ULL);
}
