#pragma once

#include <variant>
#include <vector>

#include "mmf/archive.hpp"
#include "mmf/tape.hpp"

namespace mmf::optim {

// v = momentum * v + g;  p -= lr * v
struct SgdConfig {
  double lr = 0.01;
  double momentum = 0.0;
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

using OptimizerConfig = std::variant<SgdConfig, AdamConfig>;

void validate(const OptimizerConfig& config);

struct SgdState {
  Tensor velocity;
};

struct AdamState {
  Tensor m;
  Tensor v;
  long step = 0;
};

// Single-tensor updates; state is lazily sized on first use. Shape mismatch
// between param, grad and state throws ShapeMismatch.
void sgd_step(Tensor& param, const Tensor& grad, SgdState& state, const SgdConfig& config);
void adam_step(Tensor& param, const Tensor& grad, AdamState& state, const AdamConfig& config);

// Owns per-parameter state for a fixed parameter list.
class Optimizer {
 public:
  Optimizer(OptimizerConfig config, NamedTensors params);

  // Parameters without a gradient on the tape are left alone.
  void step(const Gradients& grads);

  const NamedTensors& params() const noexcept { return params_; }

 private:
  OptimizerConfig config_;
  NamedTensors params_;
  std::vector<SgdState> sgd_;
  std::vector<AdamState> adam_;
};

}  // namespace mmf::optim
