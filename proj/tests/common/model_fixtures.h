// Small random models and inputs shared by the model tests and the
// acceptance run.

#ifndef LRASR_TESTS_MODEL_FIXTURES_H_
#define LRASR_TESTS_MODEL_FIXTURES_H_

#include <string>
#include <vector>

#include "lrasr/ctc.h"
#include "lrasr/model.h"

namespace lrasr::testing {

inline ModelCheckpoint SmallModel(int layers, int hidden, bool bi, int input_dim, int vocab, std::uint64_t seed) {
  ModelConfig cfg;
  cfg.num_layers = layers;
  cfg.hidden_units = hidden;
  cfg.bidirectional = bi;
  cfg.input_dim = input_dim;
  cfg.output_dim = vocab;
  std::vector<std::string> names;
  for (int v = 1; v < vocab; ++v) names.push_back("t" + std::to_string(v));
  Rng rng(seed);
  ModelCheckpoint m = InitModel(cfg, TokenSet::WithBlank(names), rng);
  // Non-zero biases so their gradients are exercised too.
  for (auto& [name, t] : m.tensors)
    if (name.find("bias") != std::string::npos)
      for (double& v : t.data()) v = rng.Uniform(-0.3, 0.3);
  return m;
}

inline Matrix RandomInput(std::size_t frames, std::size_t dim, Rng& rng) {
  Matrix x(frames, dim);
  for (double& v : x.data()) v = rng.Uniform(-1, 1);
  return x;
}

inline double ModelLoss(const ModelCheckpoint& m, const Matrix& x, const LabelSeq& label) {
  Rng unused(0);
  return CtcLoss(ForwardUtterance(m, x, false, unused), label, m.tokens.blank_index()).loss;
}

}  // namespace lrasr::testing

#endif  // LRASR_TESTS_MODEL_FIXTURES_H_
