// lrasr/model.h
//
// CTC acoustic model: optional linear input network (LIN), a stack of uni- or
// bi-directional LSTM layers and a softmax head, stored as a set of named
// tensors. Forward and backward passes are written out by hand.
//
// Tensor names:
//   lin.weight (I x I), lin.bias (1 x I)
//   lstm.<l>.<fw|bw>.w_input (in x 4H), .w_recur (H x 4H), .bias (1 x 4H)
//   head.weight (D*H x V), head.bias (1 x V)
// Gate blocks inside the 4H columns are ordered input, forget, cell, output.

#ifndef LRASR_MODEL_H_
#define LRASR_MODEL_H_

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "lrasr/core_math.h"
#include "lrasr/ctc.h"

namespace lrasr {

struct ModelConfig {
  int num_layers = 5;
  int hidden_units = 512;
  bool bidirectional = false;
  int input_dim = 120;
  int output_dim = 2;
  double dropout_rate = 0.0;

  void Validate() const;
  int directions() const { return bidirectional ? 2 : 1; }
  int LayerOutputDim() const { return hidden_units * directions(); }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct ModelCheckpoint {
  ModelConfig config;
  TokenSet tokens;
  std::map<std::string, Matrix> tensors;

  bool has_lin() const { return tensors.count("lin.weight") > 0; }
  const Matrix& tensor(const std::string& name) const;
};

using TrainableSet = std::set<std::string>;
using Gradients = std::map<std::string, Matrix>;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeMismatchError : public std::runtime_error {
 public:
  ShapeMismatchError(const std::string& tensor, const std::string& detail)
      : std::runtime_error("shape mismatch for tensor '" + tensor + "': " + detail),
        tensor_(tensor) {}
  const std::string& tensor() const { return tensor_; }

 private:
  std::string tensor_;
};

std::string LstmTensorName(int layer, int direction, const char* part);

// Expected name -> (rows, cols) for a config, optionally including LIN.
std::map<std::string, std::pair<std::size_t, std::size_t>> ExpectedShapes(const ModelConfig& cfg,
                                                                          bool with_lin);

// Random init: weights uniform in +-1/sqrt(fan_in), biases zero.
ModelCheckpoint InitModel(const ModelConfig& cfg, const TokenSet& tokens, Rng& rng);

// Everything the backward pass needs from one utterance's forward pass.
struct ForwardCache {
  struct Direction {
    Matrix gates;   // post-activation, T x 4H
    Matrix cells;   // T x H
    Matrix tanh_cells;
    Matrix hidden;  // T x H
  };
  struct Layer {
    Matrix input;
    std::vector<Direction> directions;
    Matrix dropout_mask;
  };
  Matrix model_input;
  std::vector<Layer> layers;
  Matrix head_input;
  Matrix log_posteriors;
};

// T x input_dim features -> T x output_dim log-posteriors.
Matrix ForwardUtterance(const ModelCheckpoint& model, const Matrix& input, bool training, Rng& rng,
                        ForwardCache* cache = nullptr);

std::vector<Matrix> ModelForward(const ModelCheckpoint& model, std::span<const Matrix> batch,
                                 bool training, Rng& rng);

Gradients ZeroGradients(const ModelCheckpoint& model);

// Accumulates d(loss)/d(params) into `grads` given d(loss)/d(logits).
void BackwardUtterance(const ModelCheckpoint& model, const ForwardCache& cache,
                       const Matrix& grad_logits, Gradients* grads);

// New randomly initialized head sized for `tokens`; other tensors untouched.
ModelCheckpoint ReplaceHead(const ModelCheckpoint& ckpt, const TokenSet& tokens, Rng& rng);

// Identity-initialized square input layer with zero bias.
ModelCheckpoint InsertLin(const ModelCheckpoint& ckpt);

enum class AdaptPhase { kLinWarmup, kFull };

// kLinWarmup: LIN and head only. kFull: every tensor.
TrainableSet SetTrainable(const ModelCheckpoint& ckpt, AdaptPhase phase);

// Adam over the trainable subset; tensors outside it are never touched.
class Optimizer {
 public:
  explicit Optimizer(double learning_rate) : learning_rate_(learning_rate) {}
  // Tensors whose name starts with `prefix` use learning_rate * factor.
  void ScaleRate(const std::string& prefix, double factor) { scales_.emplace_back(prefix, factor); }
  void Step(const Gradients& grads, const TrainableSet& trainable, ModelCheckpoint* model);
  std::uint64_t steps() const { return steps_; }

 private:
  double RateFor(const std::string& name) const;

  double learning_rate_;
  std::vector<std::pair<std::string, double>> scales_;
  std::uint64_t steps_ = 0;
  std::map<std::string, AdamState> states_;
};

// --- checkpoint file ------------------------------------------------------
//
// "LRCK", u32 version, u32 header length, JSON header {config, tokens,
// tensors: [{name, rows, cols, offset}]}, then float32 little-endian payload.

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::string SerializeCheckpoint(const ModelCheckpoint& ckpt);
ModelCheckpoint ParseCheckpoint(const std::string& bytes);
void SaveCheckpoint(const std::filesystem::path& path, const ModelCheckpoint& ckpt);
ModelCheckpoint LoadCheckpoint(const std::filesystem::path& path);
// Loads and verifies every tensor against `expected`; mismatches raise
// ShapeMismatchError naming the tensor.
ModelCheckpoint LoadCheckpoint(const std::filesystem::path& path, const ModelConfig& expected);
void ValidateAgainst(const ModelCheckpoint& ckpt, const ModelConfig& expected);

// Rounds every tensor to float32 precision, as a save/load would.
void RoundToFloat(ModelCheckpoint* ckpt);

std::uint64_t TensorChecksum(const Matrix& m);

}  // namespace lrasr

#endif  // LRASR_MODEL_H_
