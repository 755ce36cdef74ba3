// model.cc

#include "lrasr/model.h"

#include <cmath>
#include <cstring>
#include <fstream>

#include "json.hpp"

namespace lrasr {

void ModelConfig::Validate() const {
  if (num_layers < 1) throw std::invalid_argument("ModelConfig: num_layers must be >= 1");
  if (hidden_units < 1) throw std::invalid_argument("ModelConfig: hidden_units must be >= 1");
  if (input_dim < 1) throw std::invalid_argument("ModelConfig: input_dim must be > 0");
  if (output_dim < 2) throw std::invalid_argument("ModelConfig: output_dim must be >= 2");
  if (!(dropout_rate >= 0 && dropout_rate < 1))
    throw std::invalid_argument("ModelConfig: dropout_rate must lie in [0, 1)");
}

const Matrix& ModelCheckpoint::tensor(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw std::out_of_range("checkpoint has no tensor '" + name + "'");
  return it->second;
}

std::string LstmTensorName(int layer, int direction, const char* part) {
  return "lstm." + std::to_string(layer) + (direction == 0 ? ".fw." : ".bw.") + part;
}

std::map<std::string, std::pair<std::size_t, std::size_t>> ExpectedShapes(const ModelConfig& cfg,
                                                                          bool with_lin) {
  std::map<std::string, std::pair<std::size_t, std::size_t>> shapes;
  const auto in = static_cast<std::size_t>(cfg.input_dim);
  const auto hidden = static_cast<std::size_t>(cfg.hidden_units);
  if (with_lin) {
    shapes["lin.weight"] = {in, in};
    shapes["lin.bias"] = {1, in};
  }
  std::size_t layer_in = in;
  for (int l = 0; l < cfg.num_layers; ++l) {
    for (int d = 0; d < cfg.directions(); ++d) {
      shapes[LstmTensorName(l, d, "w_input")] = {layer_in, 4 * hidden};
      shapes[LstmTensorName(l, d, "w_recur")] = {hidden, 4 * hidden};
      shapes[LstmTensorName(l, d, "bias")] = {1, 4 * hidden};
    }
    layer_in = static_cast<std::size_t>(cfg.LayerOutputDim());
  }
  shapes["head.weight"] = {layer_in, static_cast<std::size_t>(cfg.output_dim)};
  shapes["head.bias"] = {1, static_cast<std::size_t>(cfg.output_dim)};
  return shapes;
}

namespace {

Matrix UniformMatrix(std::size_t rows, std::size_t cols, double bound, Rng& rng) {
  Matrix m(rows, cols);
  for (double& v : m.data()) v = rng.Uniform(-bound, bound);
  return m;
}

}  // namespace

ModelCheckpoint InitModel(const ModelConfig& cfg, const TokenSet& tokens, Rng& rng) {
  cfg.Validate();
  if (static_cast<std::size_t>(cfg.output_dim) != tokens.size())
    throw std::invalid_argument("InitModel: output_dim " + std::to_string(cfg.output_dim) +
                                " != token set size " + std::to_string(tokens.size()));
  ModelCheckpoint ckpt;
  ckpt.config = cfg;
  ckpt.tokens = tokens;
  // Draw in a fixed (layer, direction, part) order so init is reproducible.
  std::size_t layer_in = static_cast<std::size_t>(cfg.input_dim);
  const auto hidden = static_cast<std::size_t>(cfg.hidden_units);
  for (int l = 0; l < cfg.num_layers; ++l) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(layer_in + hidden));
    for (int d = 0; d < cfg.directions(); ++d) {
      ckpt.tensors[LstmTensorName(l, d, "w_input")] = UniformMatrix(layer_in, 4 * hidden, bound, rng);
      ckpt.tensors[LstmTensorName(l, d, "w_recur")] = UniformMatrix(hidden, 4 * hidden, bound, rng);
      ckpt.tensors[LstmTensorName(l, d, "bias")] = Matrix(1, 4 * hidden);
    }
    layer_in = static_cast<std::size_t>(cfg.LayerOutputDim());
  }
  const double head_bound = 1.0 / std::sqrt(static_cast<double>(layer_in));
  ckpt.tensors["head.weight"] =
      UniformMatrix(layer_in, static_cast<std::size_t>(cfg.output_dim), head_bound, rng);
  ckpt.tensors["head.bias"] = Matrix(1, static_cast<std::size_t>(cfg.output_dim));
  return ckpt;
}

// --- forward --------------------------------------------------------------

namespace {

void RunDirection(const Matrix& x, const Matrix& w_input, const Matrix& w_recur,
                  const Matrix& bias, bool reverse, ForwardCache::Direction* out) {
  const std::size_t frames = x.rows();
  const std::size_t hidden = w_recur.rows();
  Matrix pre(frames, 4 * hidden);
  MatMulAdd(x, w_input, &pre);
  AddRowBias(bias, &pre);
  out->gates = Matrix(frames, 4 * hidden);
  out->cells = Matrix(frames, hidden);
  out->tanh_cells = Matrix(frames, hidden);
  out->hidden = Matrix(frames, hidden);
  std::vector<double> h_prev(hidden, 0.0), c_prev(hidden, 0.0);
  for (std::size_t s = 0; s < frames; ++s) {
    const std::size_t t = reverse ? frames - 1 - s : s;
    auto a = pre.row(t);
    RowMulAdd(h_prev, w_recur, a);
    auto g = out->gates.row(t);
    auto c = out->cells.row(t);
    auto tc = out->tanh_cells.row(t);
    auto h = out->hidden.row(t);
    for (std::size_t j = 0; j < hidden; ++j) {
      const double ig = Sigmoid(a[j]);
      const double fg = Sigmoid(a[hidden + j]);
      const double cg = std::tanh(a[2 * hidden + j]);
      const double og = Sigmoid(a[3 * hidden + j]);
      g[j] = ig;
      g[hidden + j] = fg;
      g[2 * hidden + j] = cg;
      g[3 * hidden + j] = og;
      c[j] = fg * c_prev[j] + ig * cg;
      tc[j] = std::tanh(c[j]);
      h[j] = og * tc[j];
    }
    std::copy(h.begin(), h.end(), h_prev.begin());
    std::copy(c.begin(), c.end(), c_prev.begin());
  }
}

// Returns d(loss)/d(x) when `want_input_grad`, else an empty matrix.
Matrix BackwardDirection(const Matrix& x, const Matrix& w_input, const Matrix& w_recur,
                         bool reverse, const ForwardCache::Direction& cache,
                         const Matrix& grad_hidden, bool want_input_grad, Matrix* g_input,
                         Matrix* g_recur, Matrix* g_bias) {
  const std::size_t frames = x.rows();
  const std::size_t hidden = w_recur.rows();
  Matrix grad_pre(frames, 4 * hidden);
  Matrix prev_hidden(frames, hidden);
  std::vector<double> dh_next(hidden, 0.0), dc_next(hidden, 0.0);
  for (std::size_t s = frames; s-- > 0;) {
    const std::size_t t = reverse ? frames - 1 - s : s;
    const bool has_prev = s > 0;
    const std::size_t tp = reverse ? t + 1 : t - 1;
    auto g = cache.gates.row(t);
    auto tc = cache.tanh_cells.row(t);
    auto dh_out = grad_hidden.row(t);
    auto da = grad_pre.row(t);
    if (has_prev) {
      auto hp = cache.hidden.row(tp);
      std::copy(hp.begin(), hp.end(), prev_hidden.row(t).begin());
    }
    for (std::size_t j = 0; j < hidden; ++j) {
      const double ig = g[j], fg = g[hidden + j], cg = g[2 * hidden + j], og = g[3 * hidden + j];
      const double c_prev = has_prev ? cache.cells(tp, j) : 0.0;
      const double dh = dh_out[j] + dh_next[j];
      const double d_o = dh * tc[j];
      const double dc = dc_next[j] + dh * og * (1.0 - tc[j] * tc[j]);
      const double d_i = dc * cg;
      const double d_g = dc * ig;
      const double d_f = dc * c_prev;
      dc_next[j] = dc * fg;
      da[j] = d_i * ig * (1.0 - ig);
      da[hidden + j] = d_f * fg * (1.0 - fg);
      da[2 * hidden + j] = d_g * (1.0 - cg * cg);
      da[3 * hidden + j] = d_o * og * (1.0 - og);
    }
    std::fill(dh_next.begin(), dh_next.end(), 0.0);
    RowMulTransposeAdd(da, w_recur, dh_next);
  }
  MatTransposeMulAdd(x, grad_pre, g_input);
  MatTransposeMulAdd(prev_hidden, grad_pre, g_recur);
  AccumulateColumnSums(grad_pre, g_bias);
  if (!want_input_grad) return Matrix();
  Matrix grad_x(frames, x.cols());
  MatMulTransposeAdd(grad_pre, w_input, &grad_x);
  return grad_x;
}

}  // namespace

Matrix ForwardUtterance(const ModelCheckpoint& model, const Matrix& input, bool training, Rng& rng,
                        ForwardCache* cache) {
  const ModelConfig& cfg = model.config;
  if (input.rows() == 0) throw std::invalid_argument("ForwardUtterance: zero frames");
  if (input.cols() != static_cast<std::size_t>(cfg.input_dim))
    throw std::invalid_argument("ForwardUtterance: feature dim " + std::to_string(input.cols()) +
                                " != model input_dim " + std::to_string(cfg.input_dim));
  ForwardCache local;
  ForwardCache& fc = cache ? *cache : local;
  fc = ForwardCache{};
  fc.model_input = input;

  Matrix x = input;
  if (model.has_lin()) {
    Matrix y(input.rows(), input.cols());
    MatMulAdd(input, model.tensor("lin.weight"), &y);
    AddRowBias(model.tensor("lin.bias"), &y);
    x = std::move(y);
  }
  const std::size_t hidden = static_cast<std::size_t>(cfg.hidden_units);
  const std::size_t dirs = static_cast<std::size_t>(cfg.directions());
  fc.layers.resize(static_cast<std::size_t>(cfg.num_layers));
  for (int l = 0; l < cfg.num_layers; ++l) {
    auto& layer = fc.layers[static_cast<std::size_t>(l)];
    layer.input = std::move(x);
    layer.directions.resize(dirs);
    for (std::size_t d = 0; d < dirs; ++d) {
      const int di = static_cast<int>(d);
      RunDirection(layer.input, model.tensor(LstmTensorName(l, di, "w_input")),
                   model.tensor(LstmTensorName(l, di, "w_recur")),
                   model.tensor(LstmTensorName(l, di, "bias")), d == 1, &layer.directions[d]);
    }
    Matrix concat(input.rows(), hidden * dirs);
    for (std::size_t t = 0; t < input.rows(); ++t)
      for (std::size_t d = 0; d < dirs; ++d) {
        auto h = layer.directions[d].hidden.row(t);
        std::copy(h.begin(), h.end(), concat.row(t).begin() + static_cast<std::ptrdiff_t>(d * hidden));
      }
    x = DropoutApply(concat, cfg.dropout_rate, rng, training, &layer.dropout_mask);
  }
  fc.head_input = std::move(x);
  Matrix logits(input.rows(), static_cast<std::size_t>(cfg.output_dim));
  MatMulAdd(fc.head_input, model.tensor("head.weight"), &logits);
  AddRowBias(model.tensor("head.bias"), &logits);
  fc.log_posteriors = LogSoftmaxRows(logits);
  return fc.log_posteriors;
}

std::vector<Matrix> ModelForward(const ModelCheckpoint& model, std::span<const Matrix> batch,
                                 bool training, Rng& rng) {
  if (batch.empty()) throw std::invalid_argument("ModelForward: empty batch");
  std::vector<Matrix> out;
  out.reserve(batch.size());
  for (const auto& utt : batch) out.push_back(ForwardUtterance(model, utt, training, rng));
  return out;
}

Gradients ZeroGradients(const ModelCheckpoint& model) {
  Gradients grads;
  for (const auto& [name, t] : model.tensors) grads[name] = Matrix(t.rows(), t.cols());
  return grads;
}

void BackwardUtterance(const ModelCheckpoint& model, const ForwardCache& cache,
                       const Matrix& grad_logits, Gradients* grads) {
  const ModelConfig& cfg = model.config;
  if (!grad_logits.SameShape(cache.log_posteriors))
    throw std::invalid_argument("BackwardUtterance: gradient shape " + ShapeString(grad_logits) +
                                " != output shape " + ShapeString(cache.log_posteriors));
  MatTransposeMulAdd(cache.head_input, grad_logits, &grads->at("head.weight"));
  AccumulateColumnSums(grad_logits, &grads->at("head.bias"));
  Matrix grad_x(grad_logits.rows(), cache.head_input.cols());
  MatMulTransposeAdd(grad_logits, model.tensor("head.weight"), &grad_x);

  const std::size_t hidden = static_cast<std::size_t>(cfg.hidden_units);
  const std::size_t dirs = static_cast<std::size_t>(cfg.directions());
  const bool has_lin = model.has_lin();
  for (int l = cfg.num_layers - 1; l >= 0; --l) {
    const auto& layer = cache.layers[static_cast<std::size_t>(l)];
    auto& gd = grad_x.data();
    const auto& mask = layer.dropout_mask.data();
    for (std::size_t i = 0; i < gd.size(); ++i) gd[i] *= mask[i];

    const bool want_input_grad = l > 0 || has_lin;
    Matrix grad_in = want_input_grad ? Matrix(layer.input.rows(), layer.input.cols()) : Matrix();
    for (std::size_t d = 0; d < dirs; ++d) {
      const int di = static_cast<int>(d);
      Matrix grad_h(grad_x.rows(), hidden);
      for (std::size_t t = 0; t < grad_x.rows(); ++t) {
        auto src = grad_x.row(t).subspan(d * hidden, hidden);
        std::copy(src.begin(), src.end(), grad_h.row(t).begin());
      }
      Matrix gx = BackwardDirection(layer.input, model.tensor(LstmTensorName(l, di, "w_input")),
                                    model.tensor(LstmTensorName(l, di, "w_recur")), d == 1,
                                    layer.directions[d], grad_h, want_input_grad,
                                    &grads->at(LstmTensorName(l, di, "w_input")),
                                    &grads->at(LstmTensorName(l, di, "w_recur")),
                                    &grads->at(LstmTensorName(l, di, "bias")));
      if (want_input_grad) Axpy(1.0, gx, &grad_in);
    }
    grad_x = std::move(grad_in);
  }
  if (has_lin) {
    MatTransposeMulAdd(cache.model_input, grad_x, &grads->at("lin.weight"));
    AccumulateColumnSums(grad_x, &grads->at("lin.bias"));
  }
}

// --- adaptation edits -----------------------------------------------------

ModelCheckpoint ReplaceHead(const ModelCheckpoint& ckpt, const TokenSet& tokens, Rng& rng) {
  if (tokens.size() == 0 || tokens.blank_index() < 0)
    throw std::invalid_argument("ReplaceHead: new token set lacks <blank>");
  ModelCheckpoint out = ckpt;
  out.tokens = tokens;
  out.config.output_dim = static_cast<int>(tokens.size());
  const auto fan_in = static_cast<std::size_t>(ckpt.config.LayerOutputDim());
  out.tensors["head.weight"] =
      UniformMatrix(fan_in, tokens.size(), 1.0 / std::sqrt(static_cast<double>(fan_in)), rng);
  out.tensors["head.bias"] = Matrix(1, tokens.size());
  return out;
}

ModelCheckpoint InsertLin(const ModelCheckpoint& ckpt) {
  if (ckpt.has_lin()) throw std::invalid_argument("InsertLin: checkpoint already has a LIN layer");
  ModelCheckpoint out = ckpt;
  const auto dim = static_cast<std::size_t>(ckpt.config.input_dim);
  out.tensors["lin.weight"] = Matrix::Identity(dim);
  out.tensors["lin.bias"] = Matrix(1, dim);
  return out;
}

TrainableSet SetTrainable(const ModelCheckpoint& ckpt, AdaptPhase phase) {
  TrainableSet set;
  if (phase == AdaptPhase::kLinWarmup) {
    if (!ckpt.has_lin())
      throw std::invalid_argument("SetTrainable: lin_warmup requested but no LIN layer present");
    set = {"lin.weight", "lin.bias", "head.weight", "head.bias"};
    return set;
  }
  for (const auto& [name, t] : ckpt.tensors) set.insert(name);
  return set;
}

double Optimizer::RateFor(const std::string& name) const {
  double lr = learning_rate_;
  for (const auto& [prefix, factor] : scales_)
    if (name.rfind(prefix, 0) == 0) lr *= factor;
  return lr;
}

void Optimizer::Step(const Gradients& grads, const TrainableSet& trainable, ModelCheckpoint* model) {
  ++steps_;
  for (const auto& name : trainable) {
    auto param = model->tensors.find(name);
    if (param == model->tensors.end())
      throw std::invalid_argument("Optimizer: trainable tensor '" + name + "' not in model");
    auto grad = grads.find(name);
    if (grad == grads.end()) continue;
    auto state = states_.find(name);
    if (state == states_.end() || !state->second.first_moment.SameShape(param->second))
      state = states_.insert_or_assign(name, AdamState(param->second, RateFor(name))).first;
    AdamStep(grad->second, &state->second, &param->second);
  }
}

// --- checkpoint file ------------------------------------------------------

namespace {

constexpr char kCheckpointMagic[4] = {'L', 'R', 'C', 'K'};

void PutU32(std::string* out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out->push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint32_t GetU32(const std::string& bytes, std::size_t pos) {
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data()) + pos;
  return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
         static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
}

nlohmann::ordered_json ConfigToJson(const ModelConfig& cfg) {
  nlohmann::ordered_json j;
  j["num_layers"] = cfg.num_layers;
  j["hidden_units"] = cfg.hidden_units;
  j["bidirectional"] = cfg.bidirectional;
  j["input_dim"] = cfg.input_dim;
  j["output_dim"] = cfg.output_dim;
  j["dropout_rate"] = cfg.dropout_rate;
  return j;
}

ModelConfig ConfigFromJson(const nlohmann::json& j) {
  ModelConfig cfg;
  cfg.num_layers = j.at("num_layers").get<int>();
  cfg.hidden_units = j.at("hidden_units").get<int>();
  cfg.bidirectional = j.at("bidirectional").get<bool>();
  cfg.input_dim = j.at("input_dim").get<int>();
  cfg.output_dim = j.at("output_dim").get<int>();
  cfg.dropout_rate = j.at("dropout_rate").get<double>();
  return cfg;
}

}  // namespace

std::string SerializeCheckpoint(const ModelCheckpoint& ckpt) {
  nlohmann::ordered_json header;
  header["config"] = ConfigToJson(ckpt.config);
  header["tokens"] = ckpt.tokens.tokens();
  auto directory = nlohmann::ordered_json::array();
  std::size_t offset = 0;
  for (const auto& [name, t] : ckpt.tensors) {
    nlohmann::ordered_json entry;
    entry["name"] = name;
    entry["rows"] = t.rows();
    entry["cols"] = t.cols();
    entry["offset"] = offset;
    directory.push_back(entry);
    offset += t.size();
  }
  header["tensors"] = directory;
  const std::string header_text = header.dump();

  std::string out(kCheckpointMagic, 4);
  PutU32(&out, kCheckpointVersion);
  PutU32(&out, static_cast<std::uint32_t>(header_text.size()));
  out += header_text;
  out.reserve(out.size() + offset * 4);
  for (const auto& [name, t] : ckpt.tensors) {
    for (double v : t.data()) {
      const float f = static_cast<float>(v);
      std::uint32_t bits;
      std::memcpy(&bits, &f, sizeof bits);
      PutU32(&out, bits);
    }
  }
  return out;
}

ModelCheckpoint ParseCheckpoint(const std::string& bytes) {
  if (bytes.size() < 12 || std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0)
    throw CheckpointError("corrupt checkpoint: bad magic or truncated header");
  const std::uint32_t version = GetU32(bytes, 4);
  if (version != kCheckpointVersion)
    throw CheckpointError("unsupported checkpoint format version " + std::to_string(version));
  const std::size_t header_len = GetU32(bytes, 8);
  if (12 + header_len > bytes.size())
    throw CheckpointError("corrupt checkpoint: header length exceeds file size");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + 12,
                                   bytes.begin() + 12 + static_cast<std::ptrdiff_t>(header_len));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("corrupt checkpoint header: ") + e.what());
  }
  ModelCheckpoint ckpt;
  try {
    ckpt.config = ConfigFromJson(header.at("config"));
    ckpt.tokens = TokenSet(header.at("tokens").get<std::vector<std::string>>());
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("corrupt checkpoint header: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw CheckpointError(std::string("corrupt checkpoint header: ") + e.what());
  }
  const std::size_t payload_start = 12 + header_len;
  const std::size_t payload_floats = (bytes.size() - payload_start) / 4;
  if ((bytes.size() - payload_start) % 4 != 0)
    throw CheckpointError("corrupt checkpoint: payload is not a whole number of floats");
  std::size_t expected_offset = 0;
  for (const auto& entry : header.at("tensors")) {
    const auto name = entry.at("name").get<std::string>();
    const auto rows = entry.at("rows").get<std::size_t>();
    const auto cols = entry.at("cols").get<std::size_t>();
    const auto offset = entry.at("offset").get<std::size_t>();
    if (offset != expected_offset)
      throw CheckpointError("corrupt checkpoint: tensor directory offset mismatch at '" + name + "'");
    if (offset + rows * cols > payload_floats)
      throw CheckpointError("corrupt checkpoint: payload truncated in tensor '" + name + "'");
    Matrix t(rows, cols);
    for (std::size_t i = 0; i < t.size(); ++i) {
      const std::uint32_t bits = GetU32(bytes, payload_start + 4 * (offset + i));
      float f;
      std::memcpy(&f, &bits, sizeof f);
      t.data()[i] = f;
    }
    if (!ckpt.tensors.emplace(name, std::move(t)).second)
      throw CheckpointError("corrupt checkpoint: duplicate tensor '" + name + "'");
    expected_offset += rows * cols;
  }
  if (expected_offset != payload_floats)
    throw CheckpointError("corrupt checkpoint: payload size does not match tensor directory");
  ValidateAgainst(ckpt, ckpt.config);
  return ckpt;
}

void ValidateAgainst(const ModelCheckpoint& ckpt, const ModelConfig& expected) {
  const auto shapes = ExpectedShapes(expected, ckpt.has_lin());
  for (const auto& [name, t] : ckpt.tensors) {
    auto it = shapes.find(name);
    if (it == shapes.end()) continue;
    if (t.rows() != it->second.first || t.cols() != it->second.second)
      throw ShapeMismatchError(name, "stored " + ShapeString(t) + ", expected " +
                                         std::to_string(it->second.first) + "x" +
                                         std::to_string(it->second.second));
  }
  for (const auto& [name, t] : ckpt.tensors)
    if (!shapes.count(name)) throw ShapeMismatchError(name, "tensor not present in this configuration");
  for (const auto& [name, shape] : shapes)
    if (!ckpt.tensors.count(name)) throw ShapeMismatchError(name, "tensor missing from checkpoint");
}

void SaveCheckpoint(const std::filesystem::path& path, const ModelCheckpoint& ckpt) {
  const std::string bytes = SerializeCheckpoint(ckpt);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

ModelCheckpoint LoadCheckpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), {});
  return ParseCheckpoint(bytes);
}

ModelCheckpoint LoadCheckpoint(const std::filesystem::path& path, const ModelConfig& expected) {
  ModelCheckpoint ckpt = LoadCheckpoint(path);
  ValidateAgainst(ckpt, expected);
  return ckpt;
}

void RoundToFloat(ModelCheckpoint* ckpt) {
  for (auto& [name, t] : ckpt->tensors)
    for (double& v : t.data()) v = static_cast<float>(v);
}

std::uint64_t TensorChecksum(const Matrix& m) {
  std::uint64_t h = Fnv1a64(ShapeString(m));
  for (double v : m.data()) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    h = Fnv1a64(std::string_view(reinterpret_cast<const char*>(&bits), sizeof bits), h);
  }
  return h;
}

}  // namespace lrasr
