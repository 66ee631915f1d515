#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "mmf/archive.hpp"
#include "mmf/ops.hpp"
#include "mmf/tape.hpp"

namespace mmf::nn {

// Trainable tensors carry requires_grad; buffers (batchnorm running
// statistics) do not. Both are exported by name for checkpoints.
struct Registry {
  NamedTensors params;
  NamedTensors buffers;

  std::size_t parameter_count() const;
};

class Conv {
 public:
  Conv(ConvSpec spec, bool with_bias, std::uint64_t seed);

  Var forward(Tape& tape, const Var& x) const;
  void collect(const std::string& prefix, Registry& reg) const;

  const ConvSpec& spec() const noexcept { return spec_; }
  Tensor& weight() noexcept { return weight_; }
  const Tensor& weight() const noexcept { return weight_; }

 private:
  ConvSpec spec_;
  Tensor weight_;
  std::optional<Tensor> bias_;
};

class BatchNorm {
 public:
  explicit BatchNorm(std::size_t channels);

  // Mutates running statistics when the tape is in train mode.
  Var forward(Tape& tape, const Var& x);
  void collect(const std::string& prefix, Registry& reg) const;

  Tensor& gamma() noexcept { return gamma_; }
  Tensor& beta() noexcept { return beta_; }
  const BatchNormState& state() const noexcept { return state_; }

 private:
  Tensor gamma_;
  Tensor beta_;
  BatchNormState state_;
};

class Linear {
 public:
  Linear(std::size_t in_features, std::size_t out_features, std::uint64_t seed);

  Var forward(Tape& tape, const Var& x) const;
  void collect(const std::string& prefix, Registry& reg) const;

  std::size_t in_features() const noexcept { return weight_.extent(1); }
  std::size_t out_features() const noexcept { return weight_.extent(0); }
  Tensor& weight() noexcept { return weight_; }
  Tensor& bias() noexcept { return bias_; }
  const Tensor& weight() const noexcept { return weight_; }
  const Tensor& bias() const noexcept { return bias_; }

 private:
  Tensor weight_;
  Tensor bias_;
};

}  // namespace mmf::nn
