#include "mmf/layers.hpp"

namespace mmf::nn {

std::size_t Registry::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : params) n += t.numel();
  return n;
}

Conv::Conv(ConvSpec spec, bool with_bias, std::uint64_t seed)
    : spec_(std::move(spec)), weight_((spec_.validate(), create(spec_.weight_shape(), Init::kaiming(seed)))) {
  weight_.set_requires_grad(true);
  if (with_bias) {
    bias_ = Tensor(Shape{spec_.out_channels});
    bias_->set_requires_grad(true);
  }
}

Var Conv::forward(Tape& tape, const Var& x) const {
  const Var w = tape.leaf(weight_);
  if (bias_) {
    const Var b = tape.leaf(*bias_);
    return ops::conv(tape, x, w, &b, spec_);
  }
  return ops::conv(tape, x, w, nullptr, spec_);
}

void Conv::collect(const std::string& prefix, Registry& reg) const {
  reg.params.emplace_back(prefix + ".weight", weight_);
  if (bias_) reg.params.emplace_back(prefix + ".bias", *bias_);
}

BatchNorm::BatchNorm(std::size_t channels)
    : gamma_(create(Shape{channels}, Init::constant(1.0f))),
      beta_(Shape{channels}),
      state_{Tensor(Shape{channels}), create(Shape{channels}, Init::constant(1.0f)), 0.1f, 1e-5f} {
  gamma_.set_requires_grad(true);
  beta_.set_requires_grad(true);
}

Var BatchNorm::forward(Tape& tape, const Var& x) {
  return ops::batchnorm(tape, x, tape.leaf(gamma_), tape.leaf(beta_), state_);
}

void BatchNorm::collect(const std::string& prefix, Registry& reg) const {
  reg.params.emplace_back(prefix + ".gamma", gamma_);
  reg.params.emplace_back(prefix + ".beta", beta_);
  reg.buffers.emplace_back(prefix + ".running_mean", state_.running_mean);
  reg.buffers.emplace_back(prefix + ".running_var", state_.running_var);
}

Linear::Linear(std::size_t in_features, std::size_t out_features, std::uint64_t seed)
    : weight_(create(Shape{out_features, in_features}, Init::kaiming(seed))), bias_(Shape{out_features}) {
  weight_.set_requires_grad(true);
  bias_.set_requires_grad(true);
}

Var Linear::forward(Tape& tape, const Var& x) const {
  return ops::linear(tape, x, tape.leaf(weight_), tape.leaf(bias_));
}

void Linear::collect(const std::string& prefix, Registry& reg) const {
  reg.params.emplace_back(prefix + ".weight", weight_);
  reg.params.emplace_back(prefix + ".bias", bias_);
}

}  // namespace mmf::nn
