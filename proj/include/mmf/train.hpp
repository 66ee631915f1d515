#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mmf/acquisition.hpp"
#include "mmf/fusion.hpp"
#include "mmf/metrics.hpp"
#include "mmf/optim.hpp"

namespace mmf {

struct TrainConfig {
  optim::OptimizerConfig optimizer = optim::AdamConfig{};
  std::size_t batch_size = 4;
  std::size_t max_epochs = 100;
  // Stop once this many epochs pass without a better model (see train()).
  std::size_t patience = 10;
  // Positive-class BCE weight; unset means n_neg / n_pos on the training set.
  std::optional<double> pos_class_weight;
  // Stop as soon as an epoch's mean train loss drops below this.
  std::optional<double> target_loss;
  std::uint64_t seed = 0;

  void validate() const;
};

enum class StopReason { MaxEpochs, EarlyStop, TargetLoss, Diverged };

std::string_view stop_reason_name(StopReason r);
StopReason parse_stop_reason(std::string_view name);

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_auc = 0.0;
  std::string timestamp;
  double val_loss = 0.0;  // weighted BCE of the output on the validation set

  bool operator==(const EpochRecord&) const = default;
};

struct TrainHistory {
  std::vector<EpochRecord> records;
  std::size_t best_epoch = 0;  // 0 when no epoch completed
  StopReason stop = StopReason::MaxEpochs;
  std::string message;  // divergence report, empty otherwise

  double best_val_auc() const;
  bool operator==(const TrainHistory&) const = default;
};

// Line-delimited: one {"epoch":..,"train_loss":..,"val_auc":..,"val_loss":..,"timestamp":..}
// per epoch, then one {"best_epoch":..,"stop":..,"message":..} summary line.
void save_history(const std::filesystem::path& path, const TrainHistory& history);
TrainHistory load_history(const std::filesystem::path& path);

// "model-e012-auc0.9412.ckpt"
std::string checkpoint_name(std::size_t epoch, double val_auc);

struct TrainOptions {
  // Replaces the validation-AUC computation (tests).
  std::function<double(Classifier& model, std::size_t epoch)> validator;
  // Wall clock by default; override for reproducible timestamps.
  std::function<std::string()> clock;
  // When set, the best model so far is kept there under checkpoint_name()
  // and the history is rewritten after every epoch.
  std::optional<std::filesystem::path> checkpoint_dir;
  // Extra meta stored in the checkpoint.
  std::map<std::string, std::string> checkpoint_meta;
};

double positive_weight(std::span<const Acquisition> train);

// Eval-mode probabilities over `samples` in batches of `batch_size`.
std::vector<double> score(Classifier& model, std::span<const Acquisition> samples, std::size_t batch_size = 8);
ScoredSet scored_set(Classifier& model, std::span<const Acquisition> samples, std::size_t batch_size = 8);

// Trains in place and leaves `model` holding the best-val-AUC epoch's
// parameters. A non-finite training loss stops with StopReason::Diverged and
// restores the last good state.
TrainHistory train(Classifier& model, std::span<const Acquisition> train_set, std::span<const Acquisition> val_set,
                   const TrainConfig& config, const TrainOptions& options = {});

std::string utc_timestamp();

}  // namespace mmf
