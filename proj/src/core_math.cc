// core_math.cc

#include "lrasr/core_math.h"

#include <algorithm>
#include <cmath>

namespace lrasr {

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_)
    throw std::invalid_argument("Matrix: data length " + std::to_string(data_.size()) +
                                " does not match " + std::to_string(rows_) + "x" +
                                std::to_string(cols_));
}

Matrix Matrix::Identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

void Matrix::Fill(double value) { std::fill(data_.begin(), data_.end(), value); }

bool Matrix::AllFinite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

void Matrix::AppendRows(const Matrix& other) {
  if (empty() && rows_ == 0) cols_ = other.cols_;
  if (other.cols_ != cols_)
    throw std::invalid_argument("AppendRows: column mismatch " + ShapeString(*this) + " vs " +
                                ShapeString(other));
  data_.insert(data_.end(), other.data_.begin(), other.data_.end());
  rows_ += other.rows_;
}

Matrix Matrix::RowRange(std::size_t begin, std::size_t end) const {
  if (begin > end || end > rows_) throw std::out_of_range("RowRange out of range");
  Matrix out(end - begin, cols_);
  std::copy(data_.begin() + begin * cols_, data_.begin() + end * cols_, out.data_.begin());
  return out;
}

std::string ShapeString(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

namespace {

void CheckShape(bool ok, const char* what, const Matrix& a, const Matrix& b) {
  if (!ok)
    throw std::invalid_argument(std::string(what) + ": shape mismatch " + ShapeString(a) +
                                " and " + ShapeString(b));
}

}  // namespace

void MatMulAdd(const Matrix& a, const Matrix& b, Matrix* c) {
  CheckShape(a.cols() == b.rows(), "MatMulAdd", a, b);
  CheckShape(c->rows() == a.rows() && c->cols() == b.cols(), "MatMulAdd(out)", a, *c);
  const std::size_t n = b.cols();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double* out = c->data().data() + i * n;
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      const double* brow = b.data().data() + k * n;
      for (std::size_t j = 0; j < n; ++j) out[j] += aik * brow[j];
    }
  }
}

void MatTransposeMulAdd(const Matrix& a, const Matrix& b, Matrix* c) {
  CheckShape(a.rows() == b.rows(), "MatTransposeMulAdd", a, b);
  CheckShape(c->rows() == a.cols() && c->cols() == b.cols(), "MatTransposeMulAdd(out)", a, *c);
  const std::size_t n = b.cols();
  for (std::size_t r = 0; r < a.rows(); ++r) {
    const double* brow = b.data().data() + r * n;
    for (std::size_t i = 0; i < a.cols(); ++i) {
      const double ari = a(r, i);
      if (ari == 0.0) continue;
      double* out = c->data().data() + i * n;
      for (std::size_t j = 0; j < n; ++j) out[j] += ari * brow[j];
    }
  }
}

void MatMulTransposeAdd(const Matrix& a, const Matrix& b, Matrix* c) {
  CheckShape(a.cols() == b.cols(), "MatMulTransposeAdd", a, b);
  CheckShape(c->rows() == a.rows() && c->cols() == b.rows(), "MatMulTransposeAdd(out)", a, *c);
  for (std::size_t i = 0; i < a.rows(); ++i)
    RowMulTransposeAdd(a.row(i), b, c->row(i));
}

void RowMulAdd(std::span<const double> x, const Matrix& b, std::span<double> y) {
  const std::size_t n = b.cols();
  for (std::size_t k = 0; k < x.size(); ++k) {
    const double xk = x[k];
    if (xk == 0.0) continue;
    const double* brow = b.data().data() + k * n;
    for (std::size_t j = 0; j < n; ++j) y[j] += xk * brow[j];
  }
}

void RowMulTransposeAdd(std::span<const double> x, const Matrix& b, std::span<double> y) {
  const std::size_t n = b.cols();
  for (std::size_t i = 0; i < b.rows(); ++i) {
    const double* brow = b.data().data() + i * n;
    double acc = 0.0;
    for (std::size_t j = 0; j < n; ++j) acc += x[j] * brow[j];
    y[i] += acc;
  }
}

void AddRowBias(const Matrix& bias, Matrix* m) {
  CheckShape(bias.rows() == 1 && bias.cols() == m->cols(), "AddRowBias", bias, *m);
  for (std::size_t r = 0; r < m->rows(); ++r) {
    auto row = m->row(r);
    for (std::size_t c = 0; c < row.size(); ++c) row[c] += bias(0, c);
  }
}

void AccumulateColumnSums(const Matrix& m, Matrix* bias) {
  CheckShape(bias->rows() == 1 && bias->cols() == m.cols(), "AccumulateColumnSums", m, *bias);
  for (std::size_t r = 0; r < m.rows(); ++r) {
    auto row = m.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) (*bias)(0, c) += row[c];
  }
}

void Axpy(double scale, const Matrix& b, Matrix* a) {
  CheckShape(a->SameShape(b), "Axpy", *a, b);
  auto& ad = a->data();
  const auto& bd = b.data();
  for (std::size_t i = 0; i < ad.size(); ++i) ad[i] += scale * bd[i];
}

double LogSumExp(double a, double b) {
  if (a == kLogZero) return b;
  if (b == kLogZero) return a;
  const double hi = std::max(a, b);
  return hi + std::log1p(std::exp(std::min(a, b) - hi));
}

double LogSumExp(std::span<const double> values) {
  double hi = kLogZero;
  for (double v : values) hi = std::max(hi, v);
  if (hi == kLogZero) return kLogZero;
  double sum = 0.0;
  for (double v : values) sum += std::exp(v - hi);
  return hi + std::log(sum);
}

std::vector<double> LogSoftmax(std::span<const double> logits) {
  if (logits.empty()) throw std::invalid_argument("LogSoftmax: empty input");
  for (double v : logits)
    if (!std::isfinite(v)) throw std::invalid_argument("LogSoftmax: non-finite input");
  const double norm = LogSumExp(logits);
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - norm;
  return out;
}

Matrix LogSoftmaxRows(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    auto row = LogSoftmax(logits.row(r));
    std::copy(row.begin(), row.end(), out.row(r).begin());
  }
  return out;
}

double Sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double Rng::Uniform() {
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

std::int64_t Rng::UniformInt(std::int64_t lo, std::int64_t hi) {
  if (hi < lo) throw std::invalid_argument("UniformInt: empty range");
  const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
  if (span == 0) return static_cast<std::int64_t>(engine_());
  // Rejection sampling removes modulo bias.
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % span;
  std::uint64_t draw;
  do {
    draw = engine_();
  } while (draw >= limit);
  return lo + static_cast<std::int64_t>(draw % span);
}

double Rng::Normal() {
  // Box-Muller; one of the pair is discarded to keep the stream stateless.
  double u1;
  do {
    u1 = Uniform();
  } while (u1 <= 0.0);
  const double u2 = Uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

std::uint64_t Fnv1a64(std::string_view text, std::uint64_t hash) {
  for (unsigned char ch : text) {
    hash ^= ch;
    hash *= 1099511628211ULL;
  }
  return hash;
}

namespace {

std::uint64_t SplitMix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

std::uint64_t DeriveSeed(std::uint64_t base, std::string_view tag, std::uint64_t a,
                         std::uint64_t b) {
  std::uint64_t h = SplitMix64(base);
  h = SplitMix64(h ^ Fnv1a64(tag));
  h = SplitMix64(h ^ a);
  return SplitMix64(h ^ (b * 0x632be59bd9b4e019ULL));
}

void AdamStep(const Matrix& grad, AdamState* state, Matrix* param) {
  if (!grad.SameShape(*param))
    throw std::invalid_argument("AdamStep: gradient " + ShapeString(grad) +
                                " does not match parameter " + ShapeString(*param));
  if (!state->first_moment.SameShape(*param) || !state->second_moment.SameShape(*param))
    throw std::invalid_argument("AdamStep: optimizer state does not match parameter " +
                                ShapeString(*param));
  state->step_count += 1;
  const double t = static_cast<double>(state->step_count);
  const double correction1 = 1.0 - std::pow(state->beta1, t);
  const double correction2 = 1.0 - std::pow(state->beta2, t);
  auto& m = state->first_moment.data();
  auto& v = state->second_moment.data();
  auto& p = param->data();
  const auto& g = grad.data();
  for (std::size_t i = 0; i < p.size(); ++i) {
    m[i] = state->beta1 * m[i] + (1.0 - state->beta1) * g[i];
    v[i] = state->beta2 * v[i] + (1.0 - state->beta2) * g[i] * g[i];
    const double m_hat = m[i] / correction1;
    const double v_hat = v[i] / correction2;
    p[i] -= state->learning_rate * m_hat / (std::sqrt(v_hat) + state->epsilon);
  }
}

Matrix DropoutApply(const Matrix& activations, double rate, Rng& rng, bool training,
                    Matrix* mask) {
  if (!(rate >= 0.0 && rate < 1.0))
    throw std::invalid_argument("DropoutApply: rate must lie in [0, 1)");
  if (!training || rate == 0.0) {
    if (mask) *mask = Matrix(activations.rows(), activations.cols(), 1.0);
    return activations;
  }
  const double keep_scale = 1.0 / (1.0 - rate);
  Matrix out(activations.rows(), activations.cols());
  Matrix local_mask(activations.rows(), activations.cols());
  for (std::size_t i = 0; i < activations.size(); ++i) {
    const double factor = rng.Uniform() < rate ? 0.0 : keep_scale;
    local_mask.data()[i] = factor;
    out.data()[i] = activations.data()[i] * factor;
  }
  if (mask) *mask = std::move(local_mask);
  return out;
}

}  // namespace lrasr
