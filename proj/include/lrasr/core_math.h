// lrasr/core_math.h
//
// Dense row-major matrices, numerically stable softmax helpers, the Adam
// optimizer, inverted dropout and a portable seeded random stream.

#ifndef LRASR_CORE_MATH_H_
#define LRASR_CORE_MATH_H_

#include <cstddef>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace lrasr {

constexpr double kLogZero = -std::numeric_limits<double>::infinity();

class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  static Matrix Identity(std::size_t n);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const {
    return {data_.data() + r * cols_, cols_};
  }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  void Fill(double value);
  bool SameShape(const Matrix& other) const {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }
  bool AllFinite() const;

  // Appends rows of `other`; column counts must agree.
  void AppendRows(const Matrix& other);
  Matrix RowRange(std::size_t begin, std::size_t end) const;

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

std::string ShapeString(const Matrix& m);

// C += A * B
void MatMulAdd(const Matrix& a, const Matrix& b, Matrix* c);
// C += A^T * B
void MatTransposeMulAdd(const Matrix& a, const Matrix& b, Matrix* c);
// C += A * B^T
void MatMulTransposeAdd(const Matrix& a, const Matrix& b, Matrix* c);
// y += x * B for a single row vector x.
void RowMulAdd(std::span<const double> x, const Matrix& b, std::span<double> y);
// y += x * B^T for a single row vector x.
void RowMulTransposeAdd(std::span<const double> x, const Matrix& b, std::span<double> y);

// Adds `bias` (1 x cols) to every row.
void AddRowBias(const Matrix& bias, Matrix* m);
// Accumulates the column sums of `m` into `bias` (1 x cols).
void AccumulateColumnSums(const Matrix& m, Matrix* bias);
// a += scale * b
void Axpy(double scale, const Matrix& b, Matrix* a);

double LogSumExp(double a, double b);
double LogSumExp(std::span<const double> values);

std::vector<double> LogSoftmax(std::span<const double> logits);
// Row-wise log-softmax.
Matrix LogSoftmaxRows(const Matrix& logits);

double Sigmoid(double x);

// Seeded stream of random draws. The distributions are implemented here
// rather than with <random> adaptors so that results are identical across
// standard library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t NextU64() { return engine_(); }
  // Uniform in [0, 1).
  double Uniform();
  double Uniform(double lo, double hi) { return lo + (hi - lo) * Uniform(); }
  // Uniform integer in [lo, hi], inclusive.
  std::int64_t UniformInt(std::int64_t lo, std::int64_t hi);
  bool Bernoulli(double p) { return Uniform() < p; }
  double Normal();

  template <typename T>
  void Shuffle(std::vector<T>* items) {
    for (std::size_t i = items->size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(UniformInt(0, static_cast<std::int64_t>(i - 1)));
      std::swap((*items)[i - 1], (*items)[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

// Derives an independent stream seed from a base seed and a list of tags
// (e.g. utterance id and epoch).
std::uint64_t DeriveSeed(std::uint64_t base, std::string_view tag, std::uint64_t a = 0,
                         std::uint64_t b = 0);

std::uint64_t Fnv1a64(std::string_view text, std::uint64_t hash = 14695981039346656037ULL);

struct AdamState {
  std::uint64_t step_count = 0;
  Matrix first_moment;
  Matrix second_moment;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  AdamState() = default;
  AdamState(const Matrix& param, double lr)
      : first_moment(param.rows(), param.cols()),
        second_moment(param.rows(), param.cols()),
        learning_rate(lr) {}
};

// Bias-corrected Adam update of `param` in place.
void AdamStep(const Matrix& grad, AdamState* state, Matrix* param);

// Inverted dropout. In training mode each entry is zeroed with probability
// `rate` and survivors are scaled by 1/(1-rate); the applied multipliers are
// written to `mask` when non-null. Eval mode is the identity.
Matrix DropoutApply(const Matrix& activations, double rate, Rng& rng, bool training,
                    Matrix* mask = nullptr);

}  // namespace lrasr

#endif  // LRASR_CORE_MATH_H_
