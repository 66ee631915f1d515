#include "mmf/optim.hpp"

#include <cmath>

#include "mmf/error.hpp"

namespace mmf::optim {

namespace {

void check_shapes(const Tensor& param, const Tensor& grad, const Tensor& state) {
  if (grad.shape() != param.shape()) {
    throw ShapeMismatch("gradient shape " + to_string(grad.shape()) + " does not match parameter " +
                        to_string(param.shape()));
  }
  if (state.shape() != param.shape()) {
    throw ShapeMismatch("optimizer state shape " + to_string(state.shape()) + " does not match parameter " +
                        to_string(param.shape()));
  }
}

}  // namespace

void validate(const OptimizerConfig& config) {
  if (const auto* s = std::get_if<SgdConfig>(&config)) {
    if (!(s->lr > 0.0)) throw ConfigError("sgd: lr must be > 0");
    if (s->momentum < 0.0 || s->momentum >= 1.0) throw ConfigError("sgd: momentum must be in [0, 1)");
    return;
  }
  const auto& a = std::get<AdamConfig>(config);
  if (!(a.lr > 0.0)) throw ConfigError("adam: lr must be > 0");
  if (a.beta1 < 0.0 || a.beta1 >= 1.0 || a.beta2 < 0.0 || a.beta2 >= 1.0) {
    throw ConfigError("adam: betas must be in [0, 1)");
  }
  if (!(a.eps > 0.0)) throw ConfigError("adam: eps must be > 0");
}

void sgd_step(Tensor& param, const Tensor& grad, SgdState& state, const SgdConfig& config) {
  if (state.velocity.rank() == 0 && param.rank() != 0) state.velocity = Tensor(param.shape());
  check_shapes(param, grad, state.velocity);
  float* p = param.raw_mut();
  float* v = state.velocity.raw_mut();
  const float* g = grad.raw();
  for (std::size_t i = 0; i < param.numel(); ++i) {
    const double vel = config.momentum * static_cast<double>(v[i]) + static_cast<double>(g[i]);
    v[i] = static_cast<float>(vel);
    p[i] = static_cast<float>(static_cast<double>(p[i]) - config.lr * vel);
  }
}

void adam_step(Tensor& param, const Tensor& grad, AdamState& state, const AdamConfig& config) {
  if (state.step == 0) {
    state.m = Tensor(param.shape());
    state.v = Tensor(param.shape());
  }
  check_shapes(param, grad, state.m);
  check_shapes(param, grad, state.v);
  ++state.step;
  const double c1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.step));
  float* p = param.raw_mut();
  float* m = state.m.raw_mut();
  float* v = state.v.raw_mut();
  const float* g = grad.raw();
  for (std::size_t i = 0; i < param.numel(); ++i) {
    const double gi = g[i];
    const double mi = config.beta1 * m[i] + (1.0 - config.beta1) * gi;
    const double vi = config.beta2 * v[i] + (1.0 - config.beta2) * gi * gi;
    m[i] = static_cast<float>(mi);
    v[i] = static_cast<float>(vi);
    const double update = config.lr * (mi / c1) / (std::sqrt(vi / c2) + config.eps);
    p[i] = static_cast<float>(static_cast<double>(p[i]) - update);
  }
}

Optimizer::Optimizer(OptimizerConfig config, NamedTensors params) : config_(config), params_(std::move(params)) {
  validate(config_);
  if (std::holds_alternative<SgdConfig>(config_)) {
    for (const auto& [name, t] : params_) sgd_.push_back({Tensor(t.shape())});
  } else {
    adam_.resize(params_.size());
  }
}

void Optimizer::step(const Gradients& grads) {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = params_[i].second;
    if (!grads.has(p)) continue;
    const Tensor& g = grads.of(p);
    if (const auto* s = std::get_if<SgdConfig>(&config_)) {
      sgd_step(p, g, sgd_[i], *s);
    } else {
      adam_step(p, g, adam_[i], std::get<AdamConfig>(config_));
    }
  }
}

}  // namespace mmf::optim
