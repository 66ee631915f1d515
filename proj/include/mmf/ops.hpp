#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "mmf/tape.hpp"
#include "mmf/tensor.hpp"

namespace mmf {

// floor((in + 2*pad - kernel) / stride) + 1; throws InvalidShape when < 1.
std::size_t conv_output_extent(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t pad);

// Convolution geometry over 1-3 spatial dims. Weights are laid out as
// [out_channels, in_channels, kernel...].
struct ConvSpec {
  std::vector<std::size_t> kernel;
  std::vector<std::size_t> stride;
  std::vector<std::size_t> padding;
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;

  // Same kernel/stride/pad in every spatial dim.
  static ConvSpec uniform(std::size_t spatial_rank, std::size_t in_channels, std::size_t out_channels,
                          std::size_t kernel, std::size_t stride = 1, std::size_t pad = 0);

  std::size_t spatial_rank() const noexcept { return kernel.size(); }
  Shape weight_shape() const;
  std::size_t kernel_volume() const;
  void validate() const;
  Shape output_spatial(std::span<const std::size_t> in_spatial) const;
};

struct PoolSpec {
  std::vector<std::size_t> kernel;
  std::vector<std::size_t> stride;

  static PoolSpec uniform(std::size_t spatial_rank, std::size_t kernel, std::size_t stride);
  Shape output_spatial(std::span<const std::size_t> in_spatial) const;
};

// Per-channel running statistics owned by a batchnorm layer.
struct BatchNormState {
  Tensor running_mean;
  Tensor running_var;
  float momentum = 0.1f;
  float eps = 1e-5f;
};

inline constexpr double kBceEpsilon = 1e-7;

namespace ops {

Var add(Tape& tape, const Var& a, const Var& b);
Var mul(Tape& tape, const Var& a, const Var& b);
Var scale(Tape& tape, const Var& a, float factor);
// Element-wise mean of same-shape inputs, accumulated in double so the result
// does not depend on input order.
Var average(Tape& tape, std::span<const Var> parts);
Var sum(Tape& tape, const Var& a);
Var mean(Tape& tape, const Var& a);
Var reshape(Tape& tape, const Var& a, Shape shape);

// [M,K] x [K,N] -> [M,N]
Var matmul(Tape& tape, const Var& a, const Var& b);

Var relu(Tape& tape, const Var& a);
Var sigmoid(Tape& tape, const Var& a);

Var concat(Tape& tape, std::span<const Var> parts, std::size_t axis);
std::vector<Var> split(Tape& tape, const Var& a, std::size_t axis, std::span<const std::size_t> sizes);

// x: [N, C, spatial...]. Train mode normalizes with batch statistics and
// updates the running statistics; eval mode is a fixed affine map.
Var batchnorm(Tape& tape, const Var& x, const Var& gamma, const Var& beta, BatchNormState& state);

Var maxpool(Tape& tape, const Var& x, const PoolSpec& spec);
Var avgpool(Tape& tape, const Var& x, const PoolSpec& spec);
// [N, C, spatial...] -> [N, C]
Var global_avg_pool(Tape& tape, const Var& x);

// x: [N, F], w: [O, F], b: [O] -> [N, O]
Var linear(Tape& tape, const Var& x, const Var& w, const Var& b);

// Cross-correlation: out[n,o,p] = b[o] + sum_{c,k} w[o,c,k] * x_pad[n,c,p*stride+k].
// `b` may be untracked/absent (pass nullptr).
Var conv(Tape& tape, const Var& x, const Var& w, const Var* b, const ConvSpec& spec);

// Mean binary cross-entropy. `prob` holds N probabilities (any shape with N
// elements); they are clamped to [eps, 1-eps]. Positive terms are scaled by
// `pos_weight`.
Var bce_loss(Tape& tape, const Var& prob, std::span<const float> labels, float pos_weight = 1.0f);

}  // namespace ops
}  // namespace mmf
