#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mmf/layers.hpp"

namespace mmf::nn {

enum class Family { Residual, Dense };

struct StageSpec {
  std::size_t blocks = 1;
  std::size_t width = 0;        // residual: output channels of the stage
  std::size_t growth_rate = 0;  // dense: channels added per layer
};

// Desk-scale stand-ins for the reference backbones:
//   mini-res-a   <-> ResNet-50     mini-dense-a <-> DenseNet-121
//   mini-res-b   <-> ResNet-101    mini-dense-b <-> DenseNet-169
// The b variants are deeper than their a counterparts.
struct BackboneSpec {
  std::string preset;  // empty for custom specs
  Family family = Family::Residual;
  std::size_t spatial_rank = 3;
  std::size_t stem_channels = 8;
  std::vector<StageSpec> stages;
  float compression = 0.5f;  // dense transitions

  void validate() const;
  static BackboneSpec from_preset(const std::string& name, std::size_t spatial_rank);
};

const std::vector<std::string>& preset_names();

// Stride of the i-th downsampling step (0 = stem conv, 1 = stem pool,
// 2.. = stage transitions). En-face dims always halve; for volumes the depth
// axis only halves on odd steps, so it shrinks more slowly.
std::vector<std::size_t> downsample_stride(std::size_t spatial_rank, std::size_t step);

// conv3 -> bn -> relu -> conv3 -> bn, plus identity (or 1x1 projection when
// the stride or width changes), then relu.
class ResidualBlock {
 public:
  ResidualBlock(std::size_t in_channels, std::size_t out_channels, std::vector<std::size_t> stride,
                std::uint64_t seed);

  Var forward(Tape& tape, const Var& x);
  void collect(const std::string& prefix, Registry& reg) const;

  Conv& conv1() noexcept { return conv1_; }
  Conv& conv2() noexcept { return conv2_; }
  BatchNorm& bn2() noexcept { return bn2_; }
  bool has_projection() const noexcept { return proj_.has_value(); }

 private:
  Conv conv1_;
  BatchNorm bn1_;
  Conv conv2_;
  BatchNorm bn2_;
  std::optional<Conv> proj_;
  std::optional<BatchNorm> proj_bn_;
};

// bn -> relu -> conv3 producing growth_rate channels.
class DenseLayer {
 public:
  DenseLayer(std::size_t in_channels, std::size_t growth_rate, std::size_t spatial_rank, std::uint64_t seed);

  Var forward(Tape& tape, const Var& x);
  void collect(const std::string& prefix, Registry& reg) const;
  Conv& conv() noexcept { return conv_; }

 private:
  BatchNorm bn_;
  Conv conv_;
};

// Each layer sees the channel concatenation of the block input and every
// earlier layer's output; the block returns the concatenation of all of them.
class DenseBlock {
 public:
  DenseBlock(std::size_t in_channels, std::size_t layers, std::size_t growth_rate, std::size_t spatial_rank,
             std::uint64_t seed);

  Var forward(Tape& tape, const Var& x);
  void collect(const std::string& prefix, Registry& reg) const;

  std::size_t in_channels() const noexcept { return in_channels_; }
  std::size_t out_channels() const noexcept { return in_channels_ + layers_.size() * growth_rate_; }
  std::size_t growth_rate() const noexcept { return growth_rate_; }
  DenseLayer& layer(std::size_t i) { return layers_.at(i); }

 private:
  std::size_t in_channels_;
  std::size_t growth_rate_;
  std::vector<DenseLayer> layers_;
};

// bn -> relu -> 1x1 conv (compression) -> avg-pool downsampling.
class Transition {
 public:
  Transition(std::size_t in_channels, std::size_t out_channels, std::vector<std::size_t> stride,
             std::uint64_t seed);

  Var forward(Tape& tape, const Var& x);
  void collect(const std::string& prefix, Registry& reg) const;

 private:
  BatchNorm bn_;
  Conv conv_;
  PoolSpec pool_;
};

ResidualBlock build_residual_block(std::size_t channels, std::size_t spatial_rank, std::uint64_t seed = 0);
DenseBlock build_dense_block(std::size_t in_channels, std::size_t layers, std::size_t growth_rate,
                             std::size_t spatial_rank, std::uint64_t seed = 0);

// stem (conv, bn, relu, max-pool) -> stages -> global average pool. Output is
// [batch, feature_dim].
class FeatureExtractor {
 public:
  FeatureExtractor(BackboneSpec spec, std::size_t in_channels, std::uint64_t seed);

  FeatureExtractor(FeatureExtractor&&) = default;
  FeatureExtractor& operator=(FeatureExtractor&&) = default;
  FeatureExtractor(const FeatureExtractor&) = delete;
  FeatureExtractor& operator=(const FeatureExtractor&) = delete;

  Var forward(Tape& tape, const Var& x);
  // The last activation map, before global pooling.
  Var feature_map(Tape& tape, const Var& x);

  // Throws SizingError naming the first stage whose input is too small.
  void check_input(const Shape& input_shape) const;
  // Smallest extent per spatial dim that passes check_input.
  std::vector<std::size_t> min_input_extent() const;

  const BackboneSpec& spec() const noexcept { return spec_; }
  std::size_t in_channels() const noexcept { return in_channels_; }
  std::size_t feature_dim() const noexcept { return feature_dim_; }
  Registry registry() const;
  std::size_t parameter_count() const { return registry().parameter_count(); }

  std::vector<ResidualBlock>& residual_stage(std::size_t i) { return res_stages_.at(i); }
  DenseBlock& dense_block(std::size_t i) { return dense_blocks_.at(i); }

 private:
  BackboneSpec spec_;
  std::size_t in_channels_;
  std::size_t feature_dim_ = 0;
  Conv stem_;
  BatchNorm stem_bn_;
  PoolSpec stem_pool_;
  std::vector<std::vector<ResidualBlock>> res_stages_;
  std::vector<DenseBlock> dense_blocks_;
  std::vector<Transition> transitions_;
  std::optional<BatchNorm> final_bn_;
};

FeatureExtractor build_backbone(const BackboneSpec& spec, std::size_t in_channels, std::uint64_t seed = 0);

}  // namespace mmf::nn
