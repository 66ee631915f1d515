#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "mmf/checkpoint.hpp"
#include "mmf/error.hpp"
#include "mmf/optim.hpp"
#include "mmf/train.hpp"
#include "test_support.hpp"

namespace mmf {
namespace {

using testing::TempDir;

TEST(Sgd, PlainStepMatchesDefinition) {
  Tensor p(Shape{1});
  optim::SgdState s;
  optim::sgd_step(p, Tensor(Shape{1}, {1.0f}), s, {0.1, 0.0});
  EXPECT_FLOAT_EQ(p[0], -0.1f);
}

TEST(Sgd, MomentumAccumulatesVelocity) {
  Tensor p(Shape{1});
  optim::SgdState s;
  const Tensor g(Shape{1}, {1.0f});
  optim::sgd_step(p, g, s, {0.1, 0.9});
  optim::sgd_step(p, g, s, {0.1, 0.9});
  EXPECT_NEAR(p[0], -0.1 - 0.1 * 1.9, 1e-7);
}

TEST(Sgd, ZeroGradientIsAFixedPoint) {
  Tensor p = create({4, 3}, Init::uniform(1));
  const Tensor before = p.clone();
  optim::SgdState s;
  for (int i = 0; i < 3; ++i) optim::sgd_step(p, Tensor(Shape{4, 3}), s, {0.5, 0.0});
  EXPECT_TRUE(p.bit_equal(before));
}

TEST(Adam, FirstStepMovesByLrWhateverTheScale) {
  for (float g : {1e-3f, 0.5f, 1.0f, 1e3f, -7.0f}) {
    Tensor p(Shape{1});
    optim::AdamState s;
    optim::adam_step(p, Tensor(Shape{1}, {g}), s, {0.01, 0.9, 0.999, 1e-8});
    EXPECT_NEAR(std::abs(p[0]), 0.01, 1e-6) << g;
    EXPECT_EQ(p[0] < 0, g > 0);
  }
}

TEST(Adam, TwoStepsMatchClosedForm) {
  const optim::AdamConfig c{0.1, 0.9, 0.999, 1e-8};
  Tensor p(Shape{1}, {0.5f});
  optim::AdamState s;
  optim::adam_step(p, Tensor(Shape{1}, {2.0f}), s, c);
  optim::adam_step(p, Tensor(Shape{1}, {-1.0f}), s, c);
  double x = 0.5, m = 0, v = 0;
  const double grads[2] = {2.0, -1.0};
  for (int t = 1; t <= 2; ++t) {
    m = 0.9 * m + 0.1 * grads[t - 1];
    v = 0.999 * v + 0.001 * grads[t - 1] * grads[t - 1];
    x -= 0.1 * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
  }
  EXPECT_NEAR(p[0], x, 1e-6);
  EXPECT_EQ(s.step, 2);
}

TEST(Optim, ShapeMismatchAndBadConfig) {
  Tensor p(Shape{2});
  optim::SgdState s;
  EXPECT_THROW(optim::sgd_step(p, Tensor(Shape{3}), s, {}), ShapeMismatch);
  optim::AdamState a;
  EXPECT_THROW(optim::adam_step(p, Tensor(Shape{2, 1}), a, {}), ShapeMismatch);
  EXPECT_THROW(optim::validate(optim::SgdConfig{0.0, 0.0}), ConfigError);
  EXPECT_THROW(optim::validate(optim::AdamConfig{1e-3, 1.0, 0.999, 1e-8}), ConfigError);
}

TEST(Optim, ParametersWithoutGradientsAreLeftAlone) {
  Tensor used = create({2}, Init::constant(1.0f)), unused = create({2}, Init::constant(1.0f));
  used.set_requires_grad(true);
  unused.set_requires_grad(true);
  optim::Optimizer opt(optim::SgdConfig{0.5, 0.0}, {{"used", used}, {"unused", unused}});
  Tape tape;
  const Var loss = ops::sum(tape, tape.leaf(used));
  opt.step(backward(tape, loss));
  EXPECT_FLOAT_EQ(used[0], 0.5f);
  EXPECT_FLOAT_EQ(unused[0], 1.0f);
}

TEST(History, JsonlRoundTrip) {
  TempDir dir;
  TrainHistory h;
  h.records = {{1, 0.693, 0.5, "2026-01-01T00:00:00Z", 0.7}, {2, 0.25, 0.875, "2026-01-01T00:00:01Z", 0.31}};
  h.best_epoch = 2;
  h.stop = StopReason::EarlyStop;
  save_history(dir / "h.jsonl", h);
  EXPECT_EQ(load_history(dir / "h.jsonl"), h);
  EXPECT_EQ(h.best_val_auc(), 0.875);
}

TEST(History, CheckpointNameEmbedsEpochAndAuc) {
  EXPECT_EQ(checkpoint_name(12, 0.94123), "model-e012-auc0.9412.ckpt");
  EXPECT_EQ(checkpoint_name(1, 1.0), "model-e001-auc1.0000.ckpt");
}

TEST(TrainConfig, InvalidValuesAreConfigErrors) {
  TrainConfig c;
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = TrainConfig{};
  c.patience = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = TrainConfig{};
  c.optimizer = optim::SgdConfig{-1.0, 0.0};
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Train, PositiveWeightIsNegativesOverPositives) {
  auto acqs = testing::small_cohort(10, 1);
  std::size_t pos = 0;
  for (const auto& a : acqs) pos += a.label();
  ASSERT_GT(pos, 0u);
  EXPECT_DOUBLE_EQ(positive_weight(acqs), double(acqs.size() - pos) / double(pos));
}

std::string fixed_clock() { return "1970-01-01T00:00:00Z"; }

struct Fixture {
  std::vector<Acquisition> train_set = testing::small_cohort(12, 21);
  std::vector<Acquisition> val_set = testing::small_cohort(8, 22);
};

TEST(Train, EarlyStopReturnsBestEpochWeights) {
  Fixture f;
  auto model = build_model(Modality::Structure, "mini-res-a", 3);
  NamedTensors epoch1;
  TrainOptions options;
  options.clock = fixed_clock;
  options.validator = [&](Classifier& m, std::size_t epoch) {
    if (epoch == 1) epoch1 = snapshot(m);
    return 1.0 - 0.1 * static_cast<double>(epoch);
  };
  TrainConfig config;
  config.patience = 3;
  config.max_epochs = 50;
  const TrainHistory h = train(*model, f.train_set, f.val_set, config, options);
  EXPECT_EQ(h.records.size(), 4u);
  EXPECT_EQ(h.best_epoch, 1u);
  EXPECT_EQ(h.stop, StopReason::EarlyStop);
  const NamedTensors now = snapshot(*model);
  ASSERT_EQ(now.size(), epoch1.size());
  for (std::size_t i = 0; i < now.size(); ++i) EXPECT_TRUE(now[i].second.bit_equal(epoch1[i].second)) << now[i].first;
}

TEST(Train, EqualValidationAucIsRankedByValidationLoss) {
  Fixture f;
  TrainConfig config;
  config.max_epochs = 5;
  config.patience = 5;
  TrainOptions options;
  options.validator = [](Classifier&, std::size_t) { return 1.0; };
  auto model = build_model(Modality::Structure, "mini-res-a", 3);
  const TrainHistory h = train(*model, f.train_set, f.val_set, config, options);
  ASSERT_EQ(h.records.size(), 5u);
  std::size_t argmin = 0;
  for (std::size_t i = 1; i < h.records.size(); ++i) {
    if (h.records[i].val_loss < h.records[argmin].val_loss) argmin = i;
  }
  EXPECT_EQ(h.best_epoch, argmin + 1);
  // The restored weights are the ones that produced that loss.
  const double pw = positive_weight(f.train_set);
  const auto probs = score(*model, f.val_set);
  double loss = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const double p = std::clamp(probs[i], 1e-7, 1.0 - 1e-7);
    loss -= f.val_set[i].label() ? pw * std::log(p) : std::log(1.0 - p);
  }
  EXPECT_NEAR(loss / static_cast<double>(probs.size()), h.records[argmin].val_loss, 1e-9);
}

TEST(Train, SameSeedGivesBitIdenticalHistoryAndWeights) {
  Fixture f;
  TrainConfig config;
  config.max_epochs = 3;
  config.seed = 5;
  TrainOptions options;
  options.clock = fixed_clock;
  auto a = build_model(FusionStrategy::Intermediate, "mini-res-a", 1);
  auto b = build_model(FusionStrategy::Intermediate, "mini-res-a", 1);
  const TrainHistory ha = train(*a, f.train_set, f.val_set, config, options);
  const TrainHistory hb = train(*b, f.train_set, f.val_set, config, options);
  EXPECT_EQ(ha, hb);
  const NamedTensors sa = snapshot(*a), sb = snapshot(*b);
  for (std::size_t i = 0; i < sa.size(); ++i) EXPECT_TRUE(sa[i].second.bit_equal(sb[i].second)) << sa[i].first;
  // A different shuffle seed changes the trajectory.
  config.seed = 6;
  auto c = build_model(FusionStrategy::Intermediate, "mini-res-a", 1);
  EXPECT_NE(train(*c, f.train_set, f.val_set, config, options).records, ha.records);
}

TEST(Train, RestoredModelReproducesBestValidationAuc) {
  Fixture f;
  TrainConfig config;
  config.max_epochs = 6;
  config.patience = 6;
  auto model = build_model(FusionStrategy::Hierarchical, "mini-res-a", 2);
  const TrainHistory h = train(*model, f.train_set, f.val_set, config);
  ASSERT_GE(h.best_epoch, 1u);
  double max_auc = 0.0;
  for (const auto& r : h.records) max_auc = std::max(max_auc, r.val_auc);
  EXPECT_EQ(h.best_val_auc(), max_auc);
  EXPECT_NEAR(auc(scored_set(*model, f.val_set)), h.best_val_auc(), 1e-9);
}

TEST(Train, CheckpointDirectoryKeepsOnlyTheBest) {
  Fixture f;
  TempDir dir;
  TrainConfig config;
  config.max_epochs = 4;
  config.patience = 4;
  TrainOptions options;
  options.checkpoint_dir = dir.path();
  options.checkpoint_meta = {{"run", "probe"}};
  auto model = build_model(Modality::Flow, "mini-res-a", 2);
  const TrainHistory h = train(*model, f.train_set, f.val_set, config, options);
  std::vector<std::string> ckpts;
  for (const auto& e : std::filesystem::directory_iterator(dir.path())) {
    if (e.path().extension() == ".ckpt") ckpts.push_back(e.path().filename().string());
  }
  ASSERT_EQ(ckpts.size(), 1u);
  EXPECT_EQ(ckpts[0], checkpoint_name(h.best_epoch, h.best_val_auc()));
  EXPECT_EQ(load_history(dir / "history.jsonl"), h);
  const LoadedModel loaded = load_model(dir / ckpts[0]);
  EXPECT_EQ(loaded.meta.at("run"), "probe");
  EXPECT_EQ(score(*loaded.model, f.val_set), score(*model, f.val_set));
}

TEST(Train, OverfitsSixteenBalancedSamples) {
  std::vector<Acquisition> samples = testing::small_cohort(40, 30), balanced;
  std::size_t pos = 0, neg = 0;
  for (auto& a : samples) {
    if (a.label() && pos < 8) {
      ++pos;
      balanced.push_back(a);
    } else if (!a.label() && neg < 8) {
      ++neg;
      balanced.push_back(a);
    }
  }
  ASSERT_EQ(balanced.size(), 16u);
  TrainConfig config;
  config.max_epochs = 500;
  config.patience = 500;
  config.target_loss = 0.05;
  auto model = build_model(Modality::Structure, "mini-res-a", 4);
  TrainOptions options;
  options.validator = [](Classifier&, std::size_t) { return 0.5; };
  const TrainHistory h = train(*model, balanced, balanced, config, options);
  EXPECT_EQ(h.stop, StopReason::TargetLoss);
  EXPECT_LT(h.records.back().train_loss, 0.05);
  EXPECT_LT(h.records.back().train_loss, h.records.front().train_loss);
}

TEST(Train, DivergenceStopsAndRestoresFiniteWeights) {
  Fixture f;
  TrainConfig config;
  config.optimizer = optim::SgdConfig{1e30, 0.0};
  config.max_epochs = 10;
  auto model = build_model(Modality::Structure, "mini-res-a", 4);
  const NamedTensors initial = snapshot(*model);
  const TrainHistory h = train(*model, f.train_set, f.val_set, config);
  EXPECT_EQ(h.stop, StopReason::Diverged);
  EXPECT_FALSE(h.message.empty());
  for (const auto& [name, t] : snapshot(*model)) EXPECT_TRUE(t.all_finite()) << name;
  if (h.best_epoch == 0) {
    const NamedTensors now = snapshot(*model);
    for (std::size_t i = 0; i < now.size(); ++i) EXPECT_TRUE(now[i].second.bit_equal(initial[i].second));
  }
}

}  // namespace
}  // namespace mmf
