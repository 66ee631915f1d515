#include "mmf/fusion.hpp"

#include <algorithm>

#include "mmf/error.hpp"
#include "mmf/preprocess.hpp"
#include "mmf/rng.hpp"

namespace mmf {

std::string_view strategy_name(FusionStrategy s) {
  switch (s) {
    case FusionStrategy::Early:
      return "early";
    case FusionStrategy::Intermediate:
      return "intermediate";
    case FusionStrategy::Hierarchical:
      return "hierarchical";
  }
  return "?";
}

FusionStrategy parse_strategy(std::string_view name) {
  for (FusionStrategy s : kFusionStrategies) {
    if (strategy_name(s) == name) return s;
  }
  throw ConfigError("unknown fusion strategy '" + std::string(name) + "'");
}

std::string method_name(const Method& m) {
  if (const auto* mod = std::get_if<Modality>(&m)) return "single-" + std::string(modality_name(*mod));
  return std::string(strategy_name(std::get<FusionStrategy>(m)));
}

Method parse_method(std::string_view name) {
  constexpr std::string_view prefix = "single-";
  if (name.starts_with(prefix)) return parse_modality(name.substr(prefix.size()));
  return parse_strategy(name);
}

Tensor fuse_early(const ModalityBatch& batch) {
  const Tensor& s = batch.get(Modality::Structure);
  const Tensor& f = batch.get(Modality::Flow);
  const Tensor& l = batch.get(Modality::LSO);
  if (s.rank() != 5 || s.extent(1) != 1) throw AlignmentError("structure batch must be [N,1,D,H,W]");
  if (f.shape() != s.shape()) {
    throw AlignmentError("flow grid " + to_string(f.shape()) + " does not match structure grid " +
                         to_string(s.shape()));
  }
  if (l.rank() != 4 || l.extent(0) != s.extent(0) || l.extent(1) != 1) {
    throw AlignmentError("lso batch " + to_string(l.shape()) + " does not align with volume batch " +
                         to_string(s.shape()));
  }
  const std::size_t n = s.extent(0), d = s.extent(2), h = s.extent(3), w = s.extent(4);
  const std::size_t vol = d * h * w, plane = h * w;
  Tensor out(Shape{n, 3, d, h, w});
  float* po = out.raw_mut();
  const std::size_t lso_plane = l.extent(2) * l.extent(3);
  for (std::size_t b = 0; b < n; ++b) {
    std::copy_n(s.raw() + b * vol, vol, po + (b * 3 + 0) * vol);
    std::copy_n(f.raw() + b * vol, vol, po + (b * 3 + 1) * vol);
    Tensor img(Shape{l.extent(2), l.extent(3)},
               std::vector<float>(l.raw() + b * lso_plane, l.raw() + (b + 1) * lso_plane));
    if (img.shape() != Shape{h, w}) img = resample_linear(img, Shape{h, w});
    for (std::size_t z = 0; z < d; ++z) std::copy_n(img.raw(), plane, po + (b * 3 + 2) * vol + z * plane);
  }
  return out;
}

Tensor fuse_early(const Acquisition& sample) {
  ModalityBatch batch;
  for (Modality m : kModalities) {
    Shape shape{1, 1};
    const Shape& item = sample.modality(m).shape();
    shape.insert(shape.end(), item.begin(), item.end());
    batch.slot(m) = sample.modality(m).reshape(shape);
  }
  const Tensor fused = fuse_early(batch);
  Shape out(fused.shape().begin() + 1, fused.shape().end());
  return fused.reshape(out);
}

Var Classifier::loss(Tape& tape, const ModalityBatch& batch, std::span<const float> labels, float pos_weight) {
  return ops::bce_loss(tape, forward(tape, batch), labels, pos_weight);
}

std::vector<float> Classifier::predict(const ModalityBatch& batch) {
  Tape tape(Mode::Eval, false);
  const Var p = forward(tape, batch);
  return {p.value.data().begin(), p.value.data().end()};
}

namespace {

nn::BackboneSpec spec_for(const std::string& preset, Modality m) {
  return nn::BackboneSpec::from_preset(preset, modality_spatial_rank(m));
}

std::string prefix_for(Modality m) { return std::string(modality_name(m)); }

Var probability(Tape& tape, const nn::Linear& head, const Var& features) {
  const Var logits = head.forward(tape, features);
  return ops::reshape(tape, ops::sigmoid(tape, logits), Shape{features.shape()[0]});
}

void add_prefixed(const std::string& prefix, const nn::Registry& from, nn::Registry& to) {
  for (const auto& [n, t] : from.params) to.params.emplace_back(prefix + "." + n, t);
  for (const auto& [n, t] : from.buffers) to.buffers.emplace_back(prefix + "." + n, t);
}

}  // namespace

SingleModalityModel::SingleModalityModel(Modality modality, const std::string& preset, std::uint64_t seed)
    : modality_(modality),
      preset_(preset),
      backbone_(spec_for(preset, modality), 1, derive_seed(seed, prefix_for(modality) + ".backbone")),
      head_(backbone_.feature_dim(), 1, derive_seed(seed, "head")) {}

Var SingleModalityModel::forward(Tape& tape, const ModalityBatch& batch) {
  const Var x = Tape::constant(batch.get(modality_));
  return probability(tape, head_, backbone_.forward(tape, x));
}

nn::Registry SingleModalityModel::registry() const {
  nn::Registry reg;
  add_prefixed(prefix_for(modality_), backbone_.registry(), reg);
  head_.collect("head", reg);
  return reg;
}

FusionModel::FusionModel(FusionStrategy strategy, const std::string& preset, std::uint64_t seed)
    : strategy_(strategy), preset_(preset) {
  switch (strategy_) {
    case FusionStrategy::Early:
      backbones_.emplace_back(nn::BackboneSpec::from_preset(preset, 3), kModalities.size(),
                              derive_seed(seed, "early.backbone"));
      heads_.emplace_back(backbones_[0].feature_dim(), 1, derive_seed(seed, "head"));
      break;
    case FusionStrategy::Intermediate:
      for (Modality m : kModalities) {
        backbones_.emplace_back(spec_for(preset, m), 1, derive_seed(seed, prefix_for(m) + ".backbone"));
        heads_.emplace_back(backbones_.back().feature_dim(), 1, derive_seed(seed, prefix_for(m) + ".head"));
      }
      break;
    case FusionStrategy::Hierarchical: {
      std::size_t fused_dim = 0;
      for (Modality m : kModalities) {
        backbones_.emplace_back(spec_for(preset, m), 1, derive_seed(seed, prefix_for(m) + ".backbone"));
        fused_dim += backbones_.back().feature_dim();
      }
      heads_.emplace_back(fused_dim, 1, derive_seed(seed, "head"));
      break;
    }
  }
}

nn::FeatureExtractor& FusionModel::backbone(Modality m) {
  if (strategy_ == FusionStrategy::Early) throw Error("early fusion has a single shared backbone");
  return backbones_.at(modality_index(m));
}

std::array<Var, 3> FusionModel::modality_probabilities(Tape& tape, const ModalityBatch& batch) {
  if (strategy_ != FusionStrategy::Intermediate) throw Error("modality_probabilities needs an intermediate model");
  std::array<Var, 3> probs;
  for (Modality m : kModalities) {
    const std::size_t i = modality_index(m);
    probs[i] = probability(tape, heads_[i], backbones_[i].forward(tape, Tape::constant(batch.get(m))));
  }
  return probs;
}

std::array<Var, 3> FusionModel::modality_features(Tape& tape, const ModalityBatch& batch) {
  if (strategy_ != FusionStrategy::Hierarchical) throw Error("modality_features needs a hierarchical model");
  std::array<Var, 3> feats;
  for (Modality m : kModalities) {
    const std::size_t i = modality_index(m);
    feats[i] = backbones_[i].forward(tape, Tape::constant(batch.get(m)));
  }
  return feats;
}

Var FusionModel::head_logits(Tape& tape, const std::array<Var, 3>& features) {
  const Var fused = ops::concat(tape, features, 1);
  return heads_.at(0).forward(tape, fused);
}

Var FusionModel::forward(Tape& tape, const ModalityBatch& batch) {
  switch (strategy_) {
    case FusionStrategy::Early: {
      const Var x = Tape::constant(fuse_early(batch));
      return probability(tape, heads_[0], backbones_[0].forward(tape, x));
    }
    case FusionStrategy::Intermediate: {
      const auto probs = modality_probabilities(tape, batch);
      return ops::average(tape, probs);
    }
    case FusionStrategy::Hierarchical: {
      const auto feats = modality_features(tape, batch);
      const Var logits = head_logits(tape, feats);
      return ops::reshape(tape, ops::sigmoid(tape, logits), Shape{batch.size()});
    }
  }
  throw Error("unhandled fusion strategy");
}

Var FusionModel::loss(Tape& tape, const ModalityBatch& batch, std::span<const float> labels, float pos_weight) {
  if (strategy_ != FusionStrategy::Intermediate) return Classifier::loss(tape, batch, labels, pos_weight);
  const auto probs = modality_probabilities(tape, batch);
  std::array<Var, 3> losses;
  for (std::size_t i = 0; i < probs.size(); ++i) losses[i] = ops::bce_loss(tape, probs[i], labels, pos_weight);
  return ops::average(tape, losses);
}

nn::Registry FusionModel::registry() const {
  nn::Registry reg;
  switch (strategy_) {
    case FusionStrategy::Early:
      add_prefixed("early", backbones_[0].registry(), reg);
      heads_[0].collect("head", reg);
      break;
    case FusionStrategy::Intermediate:
      for (Modality m : kModalities) {
        const std::size_t i = modality_index(m);
        add_prefixed(prefix_for(m), backbones_[i].registry(), reg);
        heads_[i].collect(prefix_for(m) + ".head", reg);
      }
      break;
    case FusionStrategy::Hierarchical:
      for (Modality m : kModalities) add_prefixed(prefix_for(m), backbones_[modality_index(m)].registry(), reg);
      heads_[0].collect("head", reg);
      break;
  }
  return reg;
}

std::unique_ptr<FusionModel> build_fusion_model(FusionStrategy strategy, const std::string& preset,
                                                std::uint64_t seed) {
  return std::make_unique<FusionModel>(strategy, preset, seed);
}

std::unique_ptr<Classifier> build_model(const Method& method, const std::string& preset, std::uint64_t seed) {
  if (const auto* m = std::get_if<Modality>(&method)) return std::make_unique<SingleModalityModel>(*m, preset, seed);
  return build_fusion_model(std::get<FusionStrategy>(method), preset, seed);
}

std::vector<float> predict(Classifier& model, const ModalityBatch& batch) { return model.predict(batch); }

std::vector<float> predict_intermediate(FusionModel& model, const ModalityBatch& batch) {
  if (model.strategy() != FusionStrategy::Intermediate) {
    throw Error("predict_intermediate called on a " + std::string(strategy_name(model.strategy())) + " model");
  }
  return model.predict(batch);
}

std::vector<float> predict_hierarchical(FusionModel& model, const ModalityBatch& batch) {
  if (model.strategy() != FusionStrategy::Hierarchical) {
    throw Error("predict_hierarchical called on a " + std::string(strategy_name(model.strategy())) + " model");
  }
  return model.predict(batch);
}

}  // namespace mmf
