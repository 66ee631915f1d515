#include "mmf/backbone.hpp"

#include <array>
#include <cmath>

#include "mmf/error.hpp"
#include "mmf/rng.hpp"

namespace mmf::nn {

namespace {

ConvSpec conv3x3_spec(std::size_t rank, std::size_t in, std::size_t out, std::vector<std::size_t> stride) {
  ConvSpec s = ConvSpec::uniform(rank, in, out, 3, 1, 1);
  s.stride = std::move(stride);
  return s;
}

ConvSpec pointwise_spec(std::size_t rank, std::size_t in, std::size_t out, std::vector<std::size_t> stride) {
  ConvSpec s = ConvSpec::uniform(rank, in, out, 1, 1, 0);
  s.stride = std::move(stride);
  return s;
}

bool is_unit(const std::vector<std::size_t>& stride) {
  for (std::size_t s : stride) {
    if (s != 1) return false;
  }
  return true;
}

std::string stage_name(std::size_t step) { return step < 2 ? "stem" : "stage" + std::to_string(step); }

}  // namespace

void BackboneSpec::validate() const {
  if (spatial_rank != 2 && spatial_rank != 3) throw ConfigError("backbone spatial_rank must be 2 or 3");
  if (stem_channels == 0) throw ConfigError("backbone stem_channels must be >= 1");
  if (stages.empty()) throw ConfigError("backbone needs at least one stage");
  for (std::size_t i = 0; i < stages.size(); ++i) {
    const StageSpec& s = stages[i];
    if (s.blocks == 0) throw ConfigError("stage " + std::to_string(i + 1) + " has no blocks");
    if (family == Family::Residual && s.width == 0) throw ConfigError("residual stage width must be >= 1");
    if (family == Family::Dense && s.growth_rate == 0) throw ConfigError("dense growth_rate must be >= 1");
  }
  if (family == Family::Dense && !(compression > 0.0f && compression <= 1.0f)) {
    throw ConfigError("dense compression must be in (0, 1]");
  }
}

const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names{"mini-res-a", "mini-res-b", "mini-dense-a", "mini-dense-b"};
  return names;
}

BackboneSpec BackboneSpec::from_preset(const std::string& name, std::size_t spatial_rank) {
  BackboneSpec s;
  s.preset = name;
  s.spatial_rank = spatial_rank;
  s.stem_channels = 8;
  if (name == "mini-res-a") {
    s.family = Family::Residual;
    s.stages = {{1, 8, 0}, {1, 16, 0}, {1, 32, 0}};
  } else if (name == "mini-res-b") {
    s.family = Family::Residual;
    s.stages = {{1, 8, 0}, {2, 16, 0}, {3, 32, 0}};
  } else if (name == "mini-dense-a") {
    s.family = Family::Dense;
    s.stages = {{2, 0, 8}, {2, 0, 8}, {2, 0, 8}};
  } else if (name == "mini-dense-b") {
    s.family = Family::Dense;
    s.stages = {{2, 0, 8}, {3, 0, 8}, {4, 0, 8}};
  } else {
    throw ConfigError("unknown backbone preset '" + name + "'");
  }
  s.validate();
  return s;
}

std::vector<std::size_t> downsample_stride(std::size_t spatial_rank, std::size_t step) {
  std::vector<std::size_t> stride(spatial_rank, 2);
  if (spatial_rank == 3 && step % 2 == 0) stride[0] = 1;
  return stride;
}

ResidualBlock::ResidualBlock(std::size_t in_channels, std::size_t out_channels, std::vector<std::size_t> stride,
                             std::uint64_t seed)
    : conv1_(conv3x3_spec(stride.size(), in_channels, out_channels, stride), false, derive_seed(seed, "conv1")),
      bn1_(out_channels),
      conv2_(conv3x3_spec(stride.size(), out_channels, out_channels, std::vector<std::size_t>(stride.size(), 1)), false,
             derive_seed(seed, "conv2")),
      bn2_(out_channels) {
  if (!is_unit(stride) || in_channels != out_channels) {
    proj_.emplace(pointwise_spec(stride.size(), in_channels, out_channels, stride), false, derive_seed(seed, "proj"));
    proj_bn_.emplace(out_channels);
  }
}

Var ResidualBlock::forward(Tape& tape, const Var& x) {
  Var branch = ops::relu(tape, bn1_.forward(tape, conv1_.forward(tape, x)));
  branch = bn2_.forward(tape, conv2_.forward(tape, branch));
  const Var shortcut = proj_ ? proj_bn_->forward(tape, proj_->forward(tape, x)) : x;
  return ops::relu(tape, ops::add(tape, branch, shortcut));
}

void ResidualBlock::collect(const std::string& prefix, Registry& reg) const {
  conv1_.collect(prefix + ".conv1", reg);
  bn1_.collect(prefix + ".bn1", reg);
  conv2_.collect(prefix + ".conv2", reg);
  bn2_.collect(prefix + ".bn2", reg);
  if (proj_) {
    proj_->collect(prefix + ".proj", reg);
    proj_bn_->collect(prefix + ".proj_bn", reg);
  }
}

DenseLayer::DenseLayer(std::size_t in_channels, std::size_t growth_rate, std::size_t spatial_rank,
                       std::uint64_t seed)
    : bn_(in_channels),
      conv_(conv3x3_spec(spatial_rank, in_channels, growth_rate, std::vector<std::size_t>(spatial_rank, 1)), false,
            derive_seed(seed, "conv")) {}

Var DenseLayer::forward(Tape& tape, const Var& x) {
  return conv_.forward(tape, ops::relu(tape, bn_.forward(tape, x)));
}

void DenseLayer::collect(const std::string& prefix, Registry& reg) const {
  bn_.collect(prefix + ".bn", reg);
  conv_.collect(prefix + ".conv", reg);
}

DenseBlock::DenseBlock(std::size_t in_channels, std::size_t layers, std::size_t growth_rate,
                       std::size_t spatial_rank, std::uint64_t seed)
    : in_channels_(in_channels), growth_rate_(growth_rate) {
  if (layers == 0 || growth_rate == 0) throw ConfigError("dense block needs layers >= 1 and growth_rate >= 1");
  for (std::size_t i = 0; i < layers; ++i) {
    layers_.emplace_back(in_channels + i * growth_rate, growth_rate, spatial_rank,
                         derive_seed(seed, "layer" + std::to_string(i)));
  }
}

Var DenseBlock::forward(Tape& tape, const Var& x) {
  std::vector<Var> features{x};
  for (DenseLayer& layer : layers_) {
    const Var input = features.size() == 1 ? features.front() : ops::concat(tape, features, 1);
    features.push_back(layer.forward(tape, input));
  }
  return ops::concat(tape, features, 1);
}

void DenseBlock::collect(const std::string& prefix, Registry& reg) const {
  for (std::size_t i = 0; i < layers_.size(); ++i) layers_[i].collect(prefix + ".layer" + std::to_string(i), reg);
}

Transition::Transition(std::size_t in_channels, std::size_t out_channels, std::vector<std::size_t> stride,
                       std::uint64_t seed)
    : bn_(in_channels),
      conv_(pointwise_spec(stride.size(), in_channels, out_channels, std::vector<std::size_t>(stride.size(), 1)), false,
            derive_seed(seed, "conv")),
      pool_{stride, stride} {}

Var Transition::forward(Tape& tape, const Var& x) {
  return ops::avgpool(tape, conv_.forward(tape, ops::relu(tape, bn_.forward(tape, x))), pool_);
}

void Transition::collect(const std::string& prefix, Registry& reg) const {
  bn_.collect(prefix + ".bn", reg);
  conv_.collect(prefix + ".conv", reg);
}

ResidualBlock build_residual_block(std::size_t channels, std::size_t spatial_rank, std::uint64_t seed) {
  if (channels == 0) throw ConfigError("residual block channels must be >= 1");
  return ResidualBlock(channels, channels, std::vector<std::size_t>(spatial_rank, 1), seed);
}

DenseBlock build_dense_block(std::size_t in_channels, std::size_t layers, std::size_t growth_rate,
                             std::size_t spatial_rank, std::uint64_t seed) {
  return DenseBlock(in_channels, layers, growth_rate, spatial_rank, seed);
}

FeatureExtractor::FeatureExtractor(BackboneSpec spec, std::size_t in_channels, std::uint64_t seed)
    : spec_((spec.validate(), std::move(spec))),
      in_channels_(in_channels == 0 ? throw ConfigError("backbone in_channels must be >= 1") : in_channels),
      stem_(conv3x3_spec(spec_.spatial_rank, in_channels, spec_.stem_channels, downsample_stride(spec_.spatial_rank, 0)),
            false, derive_seed(seed, "stem.conv")),
      stem_bn_(spec_.stem_channels),
      stem_pool_{downsample_stride(spec_.spatial_rank, 1), downsample_stride(spec_.spatial_rank, 1)} {
  const std::size_t rank = spec_.spatial_rank;
  std::size_t channels = spec_.stem_channels;
  for (std::size_t s = 0; s < spec_.stages.size(); ++s) {
    const StageSpec& st = spec_.stages[s];
    const std::string name = "stage" + std::to_string(s + 1);
    if (spec_.family == Family::Residual) {
      std::vector<ResidualBlock> blocks;
      for (std::size_t b = 0; b < st.blocks; ++b) {
        const auto stride =
            (b == 0 && s > 0) ? downsample_stride(rank, s + 1) : std::vector<std::size_t>(rank, 1);
        blocks.emplace_back(channels, st.width, stride, derive_seed(seed, name + ".block" + std::to_string(b)));
        channels = st.width;
      }
      res_stages_.push_back(std::move(blocks));
    } else {
      if (s > 0) {
        const auto out = std::max<std::size_t>(
            1, static_cast<std::size_t>(std::floor(static_cast<double>(channels) * spec_.compression)));
        transitions_.emplace_back(channels, out, downsample_stride(rank, s + 1),
                                  derive_seed(seed, name + ".transition"));
        channels = out;
      }
      dense_blocks_.emplace_back(channels, st.blocks, st.growth_rate, rank, derive_seed(seed, name + ".dense"));
      channels = dense_blocks_.back().out_channels();
    }
  }
  if (spec_.family == Family::Dense) final_bn_.emplace(channels);
  feature_dim_ = channels;
}

void FeatureExtractor::check_input(const Shape& input_shape) const {
  const std::size_t rank = spec_.spatial_rank;
  if (input_shape.size() != rank + 2) {
    throw ShapeMismatch("backbone expects input [batch, channels, " + std::to_string(rank) +
                        " spatial dims], got " + to_string(input_shape));
  }
  if (input_shape[1] != in_channels_) {
    throw ShapeMismatch("backbone expects " + std::to_string(in_channels_) + " input channels, got " +
                        std::to_string(input_shape[1]));
  }
  std::vector<std::size_t> ext(input_shape.begin() + 2, input_shape.end());
  // Steps: stem conv, stem pool, then one per stage after the first.
  for (std::size_t step = 0; step < spec_.stages.size() + 1; ++step) {
    const auto stride = downsample_stride(rank, step);
    for (std::size_t d = 0; d < rank; ++d) {
      if (stride[d] > 1 && ext[d] < 2) {
        throw SizingError("input " + to_string(input_shape) + " too small for " + stage_name(step) +
                          ": spatial dim " + std::to_string(d) + " has extent " + std::to_string(ext[d]) +
                          " before downsampling");
      }
      // stem conv and residual transitions: k3/p1 conv; pools: kernel == stride
      const bool conv_step = step == 0 || (step >= 2 && spec_.family == Family::Residual);
      ext[d] = conv_step ? conv_output_extent(ext[d], 3, stride[d], 1) : ext[d] / stride[d];
    }
  }
}

std::vector<std::size_t> FeatureExtractor::min_input_extent() const {
  const std::size_t rank = spec_.spatial_rank;
  std::vector<std::size_t> result(rank, 1);
  for (std::size_t d = 0; d < rank; ++d) {
    for (std::size_t e = 1; e <= 4096; ++e) {
      Shape probe{1, in_channels_};
      for (std::size_t k = 0; k < rank; ++k) probe.push_back(k == d ? e : 4096);
      try {
        check_input(probe);
        result[d] = e;
        break;
      } catch (const SizingError&) {
      }
    }
  }
  return result;
}

Var FeatureExtractor::forward(Tape& tape, const Var& x) { return ops::global_avg_pool(tape, feature_map(tape, x)); }

Var FeatureExtractor::feature_map(Tape& tape, const Var& x) {
  check_input(x.shape());
  Var h = ops::relu(tape, stem_bn_.forward(tape, stem_.forward(tape, x)));
  h = ops::maxpool(tape, h, stem_pool_);
  if (spec_.family == Family::Residual) {
    for (auto& stage : res_stages_) {
      for (auto& block : stage) h = block.forward(tape, h);
    }
  } else {
    for (std::size_t s = 0; s < dense_blocks_.size(); ++s) {
      if (s > 0) h = transitions_[s - 1].forward(tape, h);
      h = dense_blocks_[s].forward(tape, h);
    }
    h = ops::relu(tape, final_bn_->forward(tape, h));
  }
  return h;
}

Registry FeatureExtractor::registry() const {
  Registry reg;
  stem_.collect("stem.conv", reg);
  stem_bn_.collect("stem.bn", reg);
  for (std::size_t s = 0; s < res_stages_.size(); ++s) {
    for (std::size_t b = 0; b < res_stages_[s].size(); ++b) {
      res_stages_[s][b].collect("stage" + std::to_string(s + 1) + ".block" + std::to_string(b), reg);
    }
  }
  for (std::size_t s = 0; s < dense_blocks_.size(); ++s) {
    if (s > 0) transitions_[s - 1].collect("stage" + std::to_string(s + 1) + ".transition", reg);
    dense_blocks_[s].collect("stage" + std::to_string(s + 1) + ".dense", reg);
  }
  if (final_bn_) final_bn_->collect("final_bn", reg);
  return reg;
}

FeatureExtractor build_backbone(const BackboneSpec& spec, std::size_t in_channels, std::uint64_t seed) {
  return FeatureExtractor(spec, in_channels, seed);
}

}  // namespace mmf::nn
