#pragma once

#include <memory>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "mmf/acquisition.hpp"
#include "mmf/backbone.hpp"

namespace mmf {

enum class FusionStrategy { Early, Intermediate, Hierarchical };

inline constexpr std::array<FusionStrategy, 3> kFusionStrategies{FusionStrategy::Early, FusionStrategy::Intermediate,
                                                                 FusionStrategy::Hierarchical};

std::string_view strategy_name(FusionStrategy s);
FusionStrategy parse_strategy(std::string_view name);

// Where hierarchical fusion joins the per-modality streams. Only pooled
// feature vectors are implemented; mid-stage feature-map fusion would be a
// second value here.
enum class HierarchicalFusionPoint { PooledFeatures };

// A training/evaluation method: either one modality alone or a fusion
// strategy over all three.
using Method = std::variant<Modality, FusionStrategy>;

std::string method_name(const Method& m);  // "single-structure", ..., "early", "intermediate", "hierarchical"
Method parse_method(std::string_view name);

// Early fusion input: channels (Structure, Flow, LSO) on the volume grid.
// LSO is bilinearly resampled to the en-face grid when needed and repeated
// along depth. Batch form: [N,3,D,H,W]; single-sample form: [3,D,H,W].
Tensor fuse_early(const ModalityBatch& batch);
Tensor fuse_early(const Acquisition& sample);

// Common interface of every trainable classifier.
class Classifier {
 public:
  virtual ~Classifier() = default;

  virtual Method method() const = 0;
  virtual const std::string& preset() const = 0;

  // Probabilities, shape [N].
  virtual Var forward(Tape& tape, const ModalityBatch& batch) = 0;
  // Training objective (weighted mean BCE by default).
  virtual Var loss(Tape& tape, const ModalityBatch& batch, std::span<const float> labels, float pos_weight);

  virtual nn::Registry registry() const = 0;
  std::size_t parameter_count() const { return registry().parameter_count(); }

  // Eval-mode probabilities without recording.
  std::vector<float> predict(const ModalityBatch& batch);
};

// One backbone plus a linear->sigmoid decision head on a single modality.
class SingleModalityModel final : public Classifier {
 public:
  SingleModalityModel(Modality modality, const std::string& preset, std::uint64_t seed);

  Method method() const override { return modality_; }
  const std::string& preset() const override { return preset_; }
  Var forward(Tape& tape, const ModalityBatch& batch) override;
  nn::Registry registry() const override;

  Modality modality() const noexcept { return modality_; }
  nn::FeatureExtractor& backbone() noexcept { return backbone_; }
  nn::Linear& head() noexcept { return head_; }

 private:
  Modality modality_;
  std::string preset_;
  nn::FeatureExtractor backbone_;
  nn::Linear head_;
};

class FusionModel final : public Classifier {
 public:
  FusionModel(FusionStrategy strategy, const std::string& preset, std::uint64_t seed);

  Method method() const override { return strategy_; }
  const std::string& preset() const override { return preset_; }
  Var forward(Tape& tape, const ModalityBatch& batch) override;
  // Intermediate fusion trains each modality network on its own BCE (mean of
  // the three) so no modality's gradient depends on another's input.
  Var loss(Tape& tape, const ModalityBatch& batch, std::span<const float> labels, float pos_weight) override;
  nn::Registry registry() const override;

  FusionStrategy strategy() const noexcept { return strategy_; }
  HierarchicalFusionPoint fusion_point() const noexcept { return HierarchicalFusionPoint::PooledFeatures; }

  // Early: one backbone (index 0). Otherwise one per modality, in
  // kModalities order.
  std::size_t backbone_count() const noexcept { return backbones_.size(); }
  nn::FeatureExtractor& backbone(std::size_t i) { return backbones_.at(i); }
  nn::FeatureExtractor& backbone(Modality m);
  // Intermediate: one head per modality. Early/Hierarchical: a single head.
  std::size_t head_count() const noexcept { return heads_.size(); }
  nn::Linear& head(std::size_t i = 0) { return heads_.at(i); }

  // Intermediate only: per-modality probabilities [N] and their mean.
  std::array<Var, 3> modality_probabilities(Tape& tape, const ModalityBatch& batch);
  // Hierarchical only: per-modality pooled features, and the head logit.
  std::array<Var, 3> modality_features(Tape& tape, const ModalityBatch& batch);
  Var head_logits(Tape& tape, const std::array<Var, 3>& features);

 private:
  FusionStrategy strategy_;
  std::string preset_;
  std::vector<nn::FeatureExtractor> backbones_;
  std::vector<nn::Linear> heads_;
};

std::unique_ptr<FusionModel> build_fusion_model(FusionStrategy strategy, const std::string& preset,
                                                std::uint64_t seed);
std::unique_ptr<Classifier> build_model(const Method& method, const std::string& preset, std::uint64_t seed);

// Eval-mode prediction entry points. The strategy-specific ones reject a
// model of another strategy.
std::vector<float> predict(Classifier& model, const ModalityBatch& batch);
std::vector<float> predict_intermediate(FusionModel& model, const ModalityBatch& batch);
std::vector<float> predict_hierarchical(FusionModel& model, const ModalityBatch& batch);

}  // namespace mmf
