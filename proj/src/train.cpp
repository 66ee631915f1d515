#include "mmf/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <numeric>

#include "json.hpp"
#include "mmf/checkpoint.hpp"
#include "mmf/error.hpp"
#include "mmf/log.hpp"
#include "mmf/rng.hpp"

namespace mmf {

void TrainConfig::validate() const {
  optim::validate(optimizer);
  if (batch_size == 0) throw ConfigError("train: batch_size must be >= 1");
  if (max_epochs == 0) throw ConfigError("train: max_epochs must be >= 1");
  if (patience == 0) throw ConfigError("train: patience must be >= 1");
  if (pos_class_weight && !(*pos_class_weight > 0.0)) throw ConfigError("train: pos_class_weight must be > 0");
}

std::string_view stop_reason_name(StopReason r) {
  switch (r) {
    case StopReason::MaxEpochs:
      return "max_epochs";
    case StopReason::EarlyStop:
      return "early_stop";
    case StopReason::TargetLoss:
      return "target_loss";
    case StopReason::Diverged:
      return "diverged";
  }
  return "?";
}

StopReason parse_stop_reason(std::string_view name) {
  for (StopReason r : {StopReason::MaxEpochs, StopReason::EarlyStop, StopReason::TargetLoss, StopReason::Diverged}) {
    if (stop_reason_name(r) == name) return r;
  }
  throw FormatError("unknown stop reason '" + std::string(name) + "'");
}

double TrainHistory::best_val_auc() const {
  if (best_epoch == 0) throw Error("history has no completed epoch");
  return records.at(best_epoch - 1).val_auc;
}

void save_history(const std::filesystem::path& path, const TrainHistory& history) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw Error("cannot write " + path.string());
  for (const auto& r : history.records) {
    nlohmann::ordered_json j;
    j["epoch"] = r.epoch;
    j["train_loss"] = r.train_loss;
    j["val_auc"] = r.val_auc;
    j["val_loss"] = r.val_loss;
    j["timestamp"] = r.timestamp;
    os << j.dump() << "\n";
  }
  nlohmann::ordered_json s;
  s["best_epoch"] = history.best_epoch;
  s["stop"] = stop_reason_name(history.stop);
  s["message"] = history.message;
  os << s.dump() << "\n";
}

TrainHistory load_history(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw FormatError("cannot read " + path.string());
  TrainHistory h;
  std::string line;
  try {
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      const auto j = nlohmann::json::parse(line);
      if (j.contains("epoch")) {
        h.records.push_back({j.at("epoch").get<std::size_t>(), j.at("train_loss").get<double>(),
                             j.at("val_auc").get<double>(), j.at("timestamp").get<std::string>(),
                             j.at("val_loss").get<double>()});
      } else {
        h.best_epoch = j.at("best_epoch").get<std::size_t>();
        h.stop = parse_stop_reason(j.at("stop").get<std::string>());
        h.message = j.at("message").get<std::string>();
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  return h;
}

std::string checkpoint_name(std::size_t epoch, double val_auc) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "model-e%03zu-auc%.4f.ckpt", epoch, val_auc);
  return buf;
}

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

double positive_weight(std::span<const Acquisition> train) {
  std::size_t pos = 0;
  for (const auto& a : train) pos += static_cast<std::size_t>(a.label());
  const std::size_t neg = train.size() - pos;
  if (pos == 0 || neg == 0) return 1.0;
  return static_cast<double>(neg) / static_cast<double>(pos);
}

std::vector<double> score(Classifier& model, std::span<const Acquisition> samples, std::size_t batch_size) {
  std::vector<double> out;
  out.reserve(samples.size());
  for (std::size_t start = 0; start < samples.size(); start += batch_size) {
    std::vector<std::size_t> idx(std::min(batch_size, samples.size() - start));
    std::iota(idx.begin(), idx.end(), start);
    for (float p : model.predict(make_batch(samples, idx))) out.push_back(p);
  }
  return out;
}

ScoredSet scored_set(Classifier& model, std::span<const Acquisition> samples, std::size_t batch_size) {
  ScoredSet s;
  s.scores = score(model, samples, batch_size);
  for (const auto& a : samples) {
    s.ids.push_back(a.id);
    s.labels.push_back(a.label());
  }
  return s;
}

namespace {

double weighted_bce(const std::vector<double>& probs, std::span<const Acquisition> samples, double pos_weight) {
  constexpr double kEps = 1e-7;
  double sum = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const double p = std::clamp(probs[i], kEps, 1.0 - kEps);
    sum -= samples[i].label() ? pos_weight * std::log(p) : std::log(1.0 - p);
  }
  return sum / static_cast<double>(probs.size());
}

}  // namespace

TrainHistory train(Classifier& model, std::span<const Acquisition> train_set, std::span<const Acquisition> val_set,
                   const TrainConfig& config, const TrainOptions& options) {
  config.validate();
  if (train_set.empty()) throw ConfigError("train: empty training set");
  const auto clock = options.clock ? options.clock : std::function<std::string()>(utc_timestamp);
  const std::size_t eval_batch = std::max<std::size_t>(config.batch_size, 8);
  const auto validator = options.validator ? options.validator : [&](Classifier& m, std::size_t) {
    return auc(scored_set(m, val_set, eval_batch));
  };
  const auto pos_weight = static_cast<float>(config.pos_class_weight.value_or(positive_weight(train_set)));

  optim::Optimizer optimizer(config.optimizer, model.registry().params);
  TrainHistory history;
  NamedTensors best_state = snapshot(model);
  double best_auc = -1.0, best_loss = 0.0;
  std::optional<std::filesystem::path> best_file;
  if (options.checkpoint_dir) std::filesystem::create_directories(*options.checkpoint_dir);

  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), 0);
    Rng rng(derive_seed(config.seed, static_cast<std::uint64_t>(epoch)));
    rng.shuffle(order.begin(), order.end());

    double loss_sum = 0.0;
    bool diverged = false;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::span<const std::size_t> idx(order.data() + start, std::min(config.batch_size, order.size() - start));
      const ModalityBatch batch = make_batch(train_set, idx);
      const std::vector<float> labels = labels_of(train_set, idx);
      Tape tape(Mode::Train, true);
      const Var loss = model.loss(tape, batch, labels, pos_weight);
      const double value = loss.value.item();
      if (!std::isfinite(value)) {
        diverged = true;
        break;
      }
      loss_sum += value * static_cast<double>(idx.size());
      optimizer.step(backward(tape, loss));
    }
    if (!diverged && !model.registry().params.empty()) {
      for (const auto& [name, t] : model.registry().params) {
        if (!t.all_finite()) {
          diverged = true;
          break;
        }
      }
    }
    if (diverged) {
      history.stop = StopReason::Diverged;
      history.message = "non-finite training loss in epoch " + std::to_string(epoch) + "; restored epoch " +
                        std::to_string(history.best_epoch) + " parameters";
      log::warn("training_diverged", {{"epoch", epoch}, {"restored_epoch", history.best_epoch}});
      break;
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(train_set.size());
    rec.val_auc = validator(model, epoch);
    rec.timestamp = clock();
    rec.val_loss = val_set.empty() ? 0.0 : weighted_bce(score(model, val_set, eval_batch), val_set, pos_weight);
    history.records.push_back(rec);
    log::emit(log::Level::Debug, "epoch", {{"epoch", epoch}, {"train_loss", rec.train_loss}, {"val_auc", rec.val_auc}});

    // A small validation set saturates at AUC 1 within a few epochs; equal
    // AUCs are then ranked by validation loss.
    if (rec.val_auc > best_auc || (rec.val_auc == best_auc && rec.val_loss < best_loss)) {
      best_auc = rec.val_auc;
      best_loss = rec.val_loss;
      history.best_epoch = epoch;
      best_state = snapshot(model);
      if (options.checkpoint_dir) {
        const auto file = *options.checkpoint_dir / checkpoint_name(epoch, rec.val_auc);
        auto meta = options.checkpoint_meta;
        meta["epoch"] = std::to_string(epoch);
        save_model(file, model, meta);
        if (best_file && *best_file != file) std::filesystem::remove(*best_file);
        best_file = file;
      }
    }
    if (options.checkpoint_dir) save_history(*options.checkpoint_dir / "history.jsonl", history);

    if (config.target_loss && rec.train_loss < *config.target_loss) {
      history.stop = StopReason::TargetLoss;
      break;
    }
    if (epoch - history.best_epoch >= config.patience) {
      history.stop = StopReason::EarlyStop;
      break;
    }
  }
  restore(model, best_state);
  if (options.checkpoint_dir) save_history(*options.checkpoint_dir / "history.jsonl", history);
  return history;
}

}  // namespace mmf
