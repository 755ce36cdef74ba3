#include <cmath>
#include <filesystem>
#include <fstream>

#include "brute_force.h"
#include "model_fixtures.h"
#include "doctest.h"
#include "lrasr/model.h"

using namespace lrasr;
using namespace lrasr::testing;

namespace {

void CheckModelGradient(const ModelCheckpoint& model, const Matrix& x, const LabelSeq& label) {
  Rng unused(0);
  ForwardCache cache;
  const Matrix logp = ForwardUtterance(model, x, false, unused, &cache);
  const CtcResult r = CtcLoss(logp, label, model.tokens.blank_index());
  REQUIRE(r.feasible());
  Gradients grads = ZeroGradients(model);
  BackwardUtterance(model, cache, r.grad, &grads);
  for (const auto& [name, tensor] : model.tensors) {
    auto f = [&, name = name](const Matrix& value) {
      ModelCheckpoint probe = model;
      probe.tensors[name] = value;
      return ModelLoss(probe, x, label);
    };
    INFO("tensor " << name);
    CHECK(MaxAbsDiff(grads.at(name), NumericGradient(f, tensor)) < 1e-6);
  }
}

double Sig(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

TEST_CASE("expected shapes follow the naming scheme") {
  ModelConfig cfg;
  cfg.num_layers = 2;
  cfg.hidden_units = 3;
  cfg.bidirectional = true;
  cfg.input_dim = 5;
  cfg.output_dim = 4;
  const auto shapes = ExpectedShapes(cfg, true);
  CHECK(shapes.at("lin.weight") == std::pair<std::size_t, std::size_t>{5, 5});
  CHECK(shapes.at("lstm.0.fw.w_input") == std::pair<std::size_t, std::size_t>{5, 12});
  CHECK(shapes.at("lstm.1.bw.w_input") == std::pair<std::size_t, std::size_t>{6, 12});
  CHECK(shapes.at("lstm.1.bw.w_recur") == std::pair<std::size_t, std::size_t>{3, 12});
  CHECK(shapes.at("head.weight") == std::pair<std::size_t, std::size_t>{6, 4});
  CHECK(shapes.size() == 2 + 2 * 2 * 3 + 2);
  CHECK_FALSE(ExpectedShapes(cfg, false).count("lin.weight"));
}

TEST_CASE("init ranges and zero biases") {
  Rng rng(1);
  ModelConfig cfg;
  cfg.num_layers = 1;
  cfg.hidden_units = 8;
  cfg.input_dim = 16;
  cfg.output_dim = 3;
  const ModelCheckpoint m = InitModel(cfg, TokenSet::WithBlank({"a", "b"}), rng);
  for (double v : m.tensor("lstm.0.fw.w_input").data()) CHECK(std::abs(v) <= 0.25);
  for (double v : m.tensor("lstm.0.fw.w_recur").data()) CHECK(std::abs(v) <= 1.0 / std::sqrt(8.0));
  for (double v : m.tensor("lstm.0.fw.bias").data()) CHECK(v == 0.0);
  for (double v : m.tensor("head.bias").data()) CHECK(v == 0.0);
}

TEST_CASE("scalar lstm matches hand recurrence") {
  ModelCheckpoint m = SmallModel(1, 1, false, 1, 2, 3);
  const Matrix& wi = m.tensor("lstm.0.fw.w_input");
  const Matrix& wr = m.tensor("lstm.0.fw.w_recur");
  const Matrix& b = m.tensor("lstm.0.fw.bias");
  const Matrix& hw = m.tensor("head.weight");
  const Matrix& hb = m.tensor("head.bias");
  const std::vector<double> xs{0.5, -1.0, 2.0, 0.25};

  double h = 0, c = 0;
  Matrix expected(xs.size(), 2);
  for (std::size_t t = 0; t < xs.size(); ++t) {
    auto pre = [&](std::size_t k) { return xs[t] * wi(0, k) + h * wr(0, k) + b(0, k); };
    const double i = Sig(pre(0)), f = Sig(pre(1)), g = std::tanh(pre(2)), o = Sig(pre(3));
    c = f * c + i * g;
    h = o * std::tanh(c);
    const double z0 = h * hw(0, 0) + hb(0, 0), z1 = h * hw(0, 1) + hb(0, 1);
    const double lse = std::log(std::exp(z0) + std::exp(z1));
    expected(t, 0) = z0 - lse;
    expected(t, 1) = z1 - lse;
  }
  Rng rng(0);
  const Matrix got = ForwardUtterance(m, Matrix(4, 1, xs), false, rng);
  CHECK(MaxAbsDiff(got, expected) < 1e-14);
}

TEST_CASE("backward direction reads the sequence in reverse") {
  // Swapping the two directions (and the matching head rows) and reversing
  // the input must reverse the output.
  ModelCheckpoint m = SmallModel(1, 2, true, 2, 3, 9);
  Rng rng(4);
  const Matrix x = RandomInput(5, 2, rng);
  Matrix xr(5, 2);
  for (std::size_t t = 0; t < 5; ++t)
    for (std::size_t c = 0; c < 2; ++c) xr(t, c) = x(4 - t, c);

  ModelCheckpoint swapped = m;
  for (const char* part : {"w_input", "w_recur", "bias"}) {
    swapped.tensors[LstmTensorName(0, 0, part)] = m.tensor(LstmTensorName(0, 1, part));
    swapped.tensors[LstmTensorName(0, 1, part)] = m.tensor(LstmTensorName(0, 0, part));
  }
  // Swap the head rows accordingly.
  Matrix& hw = swapped.tensors["head.weight"];
  for (std::size_t j = 0; j < 2; ++j)
    for (std::size_t v = 0; v < 3; ++v) std::swap(hw(j, v), hw(j + 2, v));

  const Matrix a = ForwardUtterance(m, x, false, rng);
  const Matrix b = ForwardUtterance(swapped, xr, false, rng);
  for (std::size_t t = 0; t < 5; ++t)
    for (std::size_t v = 0; v < 3; ++v) CHECK(a(t, v) == doctest::Approx(b(4 - t, v)).epsilon(1e-12));
}

TEST_CASE("model gradients match finite differences") {
  Rng rng(2718);
  for (bool bi : {false, true}) {
    for (bool lin : {false, true}) {
      ModelCheckpoint m = SmallModel(bi ? 1 : 2, 4, bi, 3, 4, rng.NextU64());
      if (lin) {
        m = InsertLin(m);
        for (double& v : m.tensors["lin.weight"].data()) v += rng.Uniform(-0.2, 0.2);
      }
      CAPTURE(bi);
      CAPTURE(lin);
      CheckModelGradient(m, RandomInput(3, 3, rng), {1, 2});
    }
  }
}

TEST_CASE("dropout masks are reused by backward") {
  ModelCheckpoint m = SmallModel(2, 3, false, 2, 3, 5);
  m.config.dropout_rate = 0.3;
  Rng data(6);
  const Matrix x = RandomInput(4, 2, data);
  const LabelSeq label{1, 2};

  Rng rng(77);
  ForwardCache cache;
  const Matrix logp = ForwardUtterance(m, x, true, rng, &cache);
  const CtcResult r = CtcLoss(logp, label, 0);
  Gradients grads = ZeroGradients(m);
  BackwardUtterance(m, cache, r.grad, &grads);

  // With the masks fixed the network is deterministic, so finite differences
  // through a replay of the same stream must agree.
  auto f = [&](const Matrix& w) {
    ModelCheckpoint probe = m;
    probe.tensors["lstm.0.fw.w_input"] = w;
    Rng replay(77);
    return CtcLoss(ForwardUtterance(probe, x, true, replay), label, 0).loss;
  };
  CHECK(MaxAbsDiff(grads.at("lstm.0.fw.w_input"), NumericGradient(f, m.tensor("lstm.0.fw.w_input"))) < 1e-6);

  Rng e1(1), e2(2);
  CHECK(ForwardUtterance(m, x, false, e1) == ForwardUtterance(m, x, false, e2));
}

TEST_CASE("identity LIN is transparent") {
  Rng rng(8);
  const ModelCheckpoint m = SmallModel(2, 5, false, 6, 4, 12);
  const ModelCheckpoint with = InsertLin(m);
  CHECK(with.tensor("lin.weight") == Matrix::Identity(6));
  for (double v : with.tensor("lin.bias").data()) CHECK(v == 0.0);
  for (int trial = 0; trial < 5; ++trial) {
    const Matrix x = RandomInput(7, 6, rng);
    CHECK(MaxAbsDiff(ForwardUtterance(m, x, false, rng), ForwardUtterance(with, x, false, rng)) < 1e-12);
  }
  CHECK_THROWS(InsertLin(with));
}

TEST_CASE("replace head only touches head tensors") {
  const ModelCheckpoint m = SmallModel(2, 4, false, 3, 5, 21);
  Rng rng(3);
  const TokenSet target = TokenSet::WithBlank({"x", "y"});
  const ModelCheckpoint out = ReplaceHead(m, target, rng);
  CHECK(out.tokens == target);
  CHECK(out.config.output_dim == 3);
  CHECK(out.tensor("head.weight").rows() == 4);
  CHECK(out.tensor("head.weight").cols() == 3);
  for (const auto& [name, t] : m.tensors) {
    if (name.rfind("head.", 0) == 0) continue;
    CHECK(TensorChecksum(out.tensor(name)) == TensorChecksum(t));
    CHECK(out.tensor(name) == t);
  }
  CHECK_NOTHROW(ValidateAgainst(out, out.config));
}

TEST_CASE("warmup phase freezes every LSTM tensor") {
  ModelCheckpoint m = InsertLin(SmallModel(2, 3, false, 2, 3, 30));
  const TrainableSet warm = SetTrainable(m, AdaptPhase::kLinWarmup);
  CHECK(warm == TrainableSet{"lin.weight", "lin.bias", "head.weight", "head.bias"});
  CHECK(SetTrainable(m, AdaptPhase::kFull).size() == m.tensors.size());
  CHECK_THROWS(SetTrainable(SmallModel(1, 2, false, 2, 3, 1), AdaptPhase::kLinWarmup));

  const ModelCheckpoint before = m;
  Optimizer opt(0.01);
  Rng rng(1);
  for (int step = 0; step < 20; ++step) {
    const Matrix x = RandomInput(4, 2, rng);
    ForwardCache cache;
    const CtcResult r = CtcLoss(ForwardUtterance(m, x, false, rng, &cache), {1, 2}, 0);
    Gradients g = ZeroGradients(m);
    BackwardUtterance(m, cache, r.grad, &g);
    opt.Step(g, warm, &m);
  }
  for (const auto& [name, t] : before.tensors) {
    if (warm.count(name))
      CHECK(m.tensor(name) != t);
    else
      CHECK(m.tensor(name) == t);
  }
}

TEST_CASE("scaled rates apply by tensor name prefix") {
  ModelCheckpoint m = InsertLin(SmallModel(1, 2, false, 2, 3, 31));
  const ModelCheckpoint before = m;
  Gradients g = ZeroGradients(m);
  for (auto& [name, t] : g)
    for (double& v : t.data()) v = 1.0;
  Optimizer opt(0.01);
  opt.ScaleRate("lin.", 0.1);
  opt.Step(g, SetTrainable(m, AdaptPhase::kFull), &m);
  // First Adam step moves every weight by lr * g / (|g| + eps).
  const double step = 0.01 / (1.0 + 1e-8);
  CHECK(before.tensor("lin.weight")(0, 0) - m.tensor("lin.weight")(0, 0) == doctest::Approx(0.1 * step).epsilon(1e-12));
  CHECK(before.tensor("lin.bias")(0, 1) - m.tensor("lin.bias")(0, 1) == doctest::Approx(0.1 * step).epsilon(1e-12));
  CHECK(before.tensor("head.weight")(1, 0) - m.tensor("head.weight")(1, 0) == doctest::Approx(step).epsilon(1e-12));
}

TEST_CASE("checkpoint round trip and corruption") {
  ModelCheckpoint m = InsertLin(SmallModel(2, 3, true, 4, 3, 40));
  RoundToFloat(&m);
  const std::string bytes = SerializeCheckpoint(m);
  const ModelCheckpoint back = ParseCheckpoint(bytes);
  CHECK(back.config == m.config);
  CHECK(back.tokens == m.tokens);
  CHECK(back.tensors == m.tensors);
  CHECK(SerializeCheckpoint(back) == bytes);

  std::string bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS(ParseCheckpoint(bad), CheckpointError);
  CHECK_THROWS_AS(ParseCheckpoint(bytes.substr(0, bytes.size() - 3)), CheckpointError);
  CHECK_THROWS_AS(ParseCheckpoint(bytes.substr(0, 10)), CheckpointError);
  std::string version = bytes;
  version[4] = 9;
  CHECK_THROWS_AS(ParseCheckpoint(version), CheckpointError);
  std::string header = bytes;
  header[14] = '#';
  CHECK_THROWS_AS(ParseCheckpoint(header), CheckpointError);
}

TEST_CASE("loading a bidirectional checkpoint as unidirectional names the tensor") {
  const auto path = std::filesystem::temp_directory_path() / "lrasr_model_bi.ckpt";
  ModelCheckpoint bi = SmallModel(2, 3, true, 4, 3, 50);
  SaveCheckpoint(path, bi);
  ModelConfig uni = bi.config;
  uni.bidirectional = false;
  try {
    LoadCheckpoint(path, uni);
    FAIL("expected a shape mismatch");
  } catch (const ShapeMismatchError& e) {
    // The head is the first tensor (in name order) whose shape depends on directionality.
    CHECK(e.tensor() == "head.weight");
    CHECK(std::string(e.what()).find(e.tensor()) != std::string::npos);
  }
  CHECK_NOTHROW(LoadCheckpoint(path, bi.config));
  CHECK_THROWS(LoadCheckpoint(std::filesystem::temp_directory_path() / "lrasr_missing.ckpt"));
}
