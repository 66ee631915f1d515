#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mmf/error.hpp"
#include "mmf/fusion.hpp"
#include "mmf/preprocess.hpp"
#include "mmf/report.hpp"
#include "mmf/split.hpp"
#include "mmf/synth.hpp"
#include "mmf/train.hpp"

namespace mmf {

inline constexpr int kExperimentConfigVersion = 1;

// Process exit codes of the command line tool.
inline constexpr int kExitOk = 0;
inline constexpr int kExitInternal = 1;  // unexpected exception
inline constexpr int kExitConfig = 2;    // invalid config, bad usage, refusing to overwrite
inline constexpr int kExitRun = 3;       // a run diverged or failed, missing checkpoint, unreadable data

// A run could not complete (divergence, missing checkpoint, bad data).
class RunFailure : public Error {
 public:
  using Error::Error;
};

struct RunConfig {
  std::string name;
  Method method = Modality::Structure;
  std::string backbone = "mini-res-a";
  TrainConfig train;
};

struct ExperimentConfig {
  std::filesystem::path output_dir;
  // Exactly one data source.
  std::optional<SynthConfig> synth;
  std::optional<std::filesystem::path> manifest;
  PreprocessConfig preprocess;
  std::array<double, 3> split_fractions = kDefaultSplitFractions;
  std::uint64_t split_seed = 0;
  // Use the manifest's per-record split instead of drawing one.
  bool use_recorded_split = false;
  std::vector<RunConfig> runs;
  std::string baseline;

  void validate() const;
  const RunConfig& run(const std::string& name) const;
};

// Relative paths inside the config resolve against `base_dir`. Unknown keys,
// wrong types and invariant violations throw ConfigError.
ExperimentConfig parse_experiment_config(const std::string& text, const std::filesystem::path& base_dir);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

// Output layout under output_dir:
//   data/manifest.jsonl, data/tensors/*.ften   synthetic dataset
//   split.json
//   runs/<name>/model-eNNN-aucX.XXXX.ckpt, history.jsonl, scores.csv
//   report.csv, report.txt, roc.svg
struct ExperimentLayout {
  std::filesystem::path root;

  std::filesystem::path data_dir() const { return root / "data"; }
  std::filesystem::path synth_manifest() const { return data_dir() / "manifest.jsonl"; }
  std::filesystem::path split_file() const { return root / "split.json"; }
  std::filesystem::path run_dir(const std::string& run) const { return root / "runs" / run; }
  std::filesystem::path history_file(const std::string& run) const { return run_dir(run) / "history.jsonl"; }
  std::filesystem::path scores_file(const std::string& run) const { return run_dir(run) / "scores.csv"; }
  std::filesystem::path report_csv() const { return root / "report.csv"; }
  std::filesystem::path report_txt() const { return root / "report.txt"; }
  std::filesystem::path roc_svg() const { return root / "roc.svg"; }
};

ExperimentLayout layout(const ExperimentConfig& config);

// Writes the synthetic dataset. Refuses (ConfigError) to touch an existing
// dataset unless `force`, in which case it is regenerated from scratch.
void cmd_synth(const ExperimentConfig& config, bool force);

struct PreparedData {
  std::vector<Acquisition> train;
  std::vector<Acquisition> val;
  std::vector<Acquisition> test;
  DatasetSplit split;
};

// Loads and preprocesses the dataset and splits it by patient.
PreparedData prepare_data(const ExperimentConfig& config);

struct RunOutcome {
  std::string name;
  TrainHistory history;
  bool failed = false;
  std::string error;
};

// Trains every run (or only those named in `only`). Failures are recorded and
// the remaining runs continue. `jobs` > 1 trains independent runs in parallel.
std::vector<RunOutcome> cmd_run(const ExperimentConfig& config, std::size_t jobs = 1,
                                const std::vector<std::string>& only = {});

// The saved checkpoint of a run; RunFailure naming the run when absent.
std::filesystem::path find_checkpoint(const ExperimentConfig& config, const std::string& run);

struct RunScores {
  ScoredSet val;
  ScoredSet test;
};

// scores.csv: header "split,id,label,score", one row per val/test acquisition,
// scores printed with 17 significant digits.
void save_scores(const std::filesystem::path& path, const RunScores& scores);
RunScores load_scores(const std::filesystem::path& path);

// Evaluates every run on the test split with its validation-chosen
// threshold, writes report.csv, report.txt and roc.svg. Cached scores.csv
// files are used when present; otherwise the checkpoint is evaluated and the
// scores cached.
MetricsReport cmd_compare(const ExperimentConfig& config);

}  // namespace mmf
