// Command line front end: synth, run, compare, gradcheck.
#include <cstdio>
#include <iostream>

#include "CLI11.hpp"
#include "mmf/error.hpp"
#include "mmf/experiment.hpp"
#include "mmf/gradsuite.hpp"
#include "mmf/log.hpp"

namespace {

mmf::ExperimentConfig load(const std::string& path, const std::string& output_override) {
  mmf::ExperimentConfig config = mmf::load_experiment_config(path);
  if (!output_override.empty()) config.output_dir = output_override;
  return config;
}

int gradcheck(std::size_t seeds, float step) {
  mmf::GradSuiteOptions options;
  options.seeds = seeds;
  options.step = step;
  std::size_t failed = 0;
  mmf::run_grad_suite(options, [&](const mmf::GradCaseResult& r) {
    std::printf("%-4s %-26s params=%-5zu rechecked=%-3zu max_abs_err=%.2e\n", r.passed() ? "ok" : "FAIL",
                mmf::describe(r.which).c_str(), r.parameters, r.rechecked, r.max_abs_error);
    for (std::size_t i = 0; i < r.mismatches.size() && i < 5; ++i) {
      const auto& m = r.mismatches[i];
      std::printf("     %s[%zu] analytic=%.6g numeric=%.6g\n", m.name.c_str(), m.index, m.analytic, m.numeric);
    }
    failed += r.passed() ? 0 : 1;
  });
  std::printf("%zu case(s) failed\n", failed);
  return failed == 0 ? mmf::kExitOk : mmf::kExitRun;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multimodal fusion experiments: synthetic data, training, comparison reports"};
  app.require_subcommand(1);
  std::string log_level = "info";
  app.add_option("--log-level", log_level, "debug, info, warn or error")
      ->check(CLI::IsMember({"debug", "info", "warn", "error"}));

  std::string config_path, output;
  bool force = false;
  std::size_t jobs = 1;
  std::vector<std::string> only;

  auto* synth = app.add_subcommand("synth", "Generate the synthetic dataset described by the config");
  synth->add_option("config", config_path, "experiment config (JSON)")->required();
  synth->add_option("--output", output, "override the config's output_dir");
  synth->add_flag("--force", force, "regenerate an existing dataset");

  auto* run = app.add_subcommand("run", "Train every run in the config");
  run->add_option("config", config_path, "experiment config (JSON)")->required();
  run->add_option("--output", output, "override the config's output_dir");
  run->add_option("--jobs", jobs, "train up to N runs in parallel")->check(CLI::PositiveNumber);
  run->add_option("--only", only, "train only the named runs");

  auto* compare = app.add_subcommand("compare", "Evaluate all runs and write report.csv, report.txt, roc.svg");
  compare->add_option("config", config_path, "experiment config (JSON)")->required();
  compare->add_option("--output", output, "override the config's output_dir");

  std::size_t seeds = 20;
  float step = 1e-3f;
  auto* grad = app.add_subcommand("gradcheck", "Finite-difference check of backbone gradients");
  grad->add_option("--seeds", seeds, "seeds per family and dimensionality")->check(CLI::PositiveNumber);
  grad->add_option("--step", step, "finite-difference step");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? mmf::kExitOk : mmf::kExitConfig;
  }

  const mmf::log::Level levels[] = {mmf::log::Level::Debug, mmf::log::Level::Info, mmf::log::Level::Warn,
                                    mmf::log::Level::Error};
  for (auto level : levels) {
    if (mmf::log::level_name(level) == log_level) mmf::log::set_min_level(level);
  }

  try {
    if (*grad) return gradcheck(seeds, step);
    const mmf::ExperimentConfig config = load(config_path, output);
    if (*synth) {
      mmf::cmd_synth(config, force);
      return mmf::kExitOk;
    }
    if (*run) {
      int code = mmf::kExitOk;
      for (const auto& outcome : mmf::cmd_run(config, jobs, only)) {
        if (outcome.failed) {
          std::fprintf(stderr, "run '%s' failed: %s\n", outcome.name.c_str(), outcome.error.c_str());
          code = mmf::kExitRun;
        }
      }
      return code;
    }
    if (*compare) {
      const mmf::MetricsReport report = mmf::cmd_compare(config);
      std::cout << report.text();
      return mmf::kExitOk;
    }
  } catch (const mmf::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return mmf::kExitConfig;
  } catch (const mmf::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return mmf::kExitRun;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "internal error: %s\n", e.what());
    return mmf::kExitInternal;
  }
  return mmf::kExitInternal;
}
