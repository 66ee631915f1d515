// Acceptance checks, one per criterion. Prints one PASS/FAIL line per
// criterion (details on the lines above it) and exits nonzero on any FAIL.
//
//   acceptance                 all criteria
//   acceptance --criterion N   only criterion N
//   acceptance --seeds K       seeds for the fusion-benefit comparison (default 5)
#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "mmf/checkpoint.hpp"
#include "mmf/error.hpp"
#include "mmf/experiment.hpp"
#include "mmf/gradsuite.hpp"
#include "mmf/log.hpp"
#include "mmf/manifest.hpp"
#include "mmf/metrics.hpp"
#include "mmf/ops.hpp"
#include "mmf/preprocess.hpp"
#include "mmf/rng.hpp"
#include "mmf/split.hpp"
#include "mmf/synth.hpp"
#include "mmf/train.hpp"
#include "test_support.hpp"

namespace mmf {
namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

// Collects failure reasons for one criterion.
struct Verdict {
  std::vector<std::string> failures;

  void check(bool ok, const std::string& what) {
    if (!ok) failures.push_back(what);
  }
  bool passed() const { return failures.empty(); }
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, v);
  return buf;
}

std::vector<Acquisition> preprocessed(const SynthConfig& synth) {
  PreprocessConfig pre;
  pre.volume_grid = synth.volume_grid;
  pre.lso_grid = synth.lso_grid;
  std::vector<Acquisition> out;
  for (const auto& a : synth_generate(synth)) out.push_back(preprocess(a, pre));
  return out;
}

std::vector<Acquisition> pick(const std::vector<Acquisition>& all, const std::vector<std::size_t>& idx) {
  std::vector<Acquisition> out;
  for (std::size_t i : idx) out.push_back(all[i]);
  return out;
}

std::vector<Method> six_methods() {
  return {Modality::Structure, Modality::Flow, Modality::LSO, FusionStrategy::Early, FusionStrategy::Intermediate,
          FusionStrategy::Hierarchical};
}

// ---- 1 ---------------------------------------------------------------------

Verdict gradient_suite() {
  Verdict v;
  const auto t0 = Clock::now();
  GradSuiteOptions options;  // 20 seeds, max(1e-4 abs, 1e-2 rel)
  std::size_t cases = 0, elements = 0, rechecked = 0;
  run_grad_suite(options, [&](const GradCaseResult& r) {
    ++cases;
    elements += r.checked;
    rechecked += r.rechecked;
    v.check(r.passed(), describe(r.which) + ": " + std::to_string(r.mismatches.size()) + " mismatching elements");
    v.check(r.checked == r.parameters, describe(r.which) + ": not every parameter element was checked");
  });
  const double secs = seconds_since(t0);
  std::printf("  %zu cases, %zu parameter elements checked (%zu at a neighbouring step), %.1f s\n", cases, elements,
              rechecked, secs);
  v.check(cases == 2 * 2 * options.seeds, "expected both families in 2-D and 3-D");
  v.check(secs < 300.0, "runtime " + fmt("%.1f", secs) + " s exceeds 5 min");
  return v;
}

// ---- 2 ---------------------------------------------------------------------

Verdict auc_oracle() {
  Verdict v;
  Rng rng(2024);
  std::size_t exact = 0, with_ties = 0;
  double worst_trapezoid = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 2 + rng.below(199);  // 2..200
    const std::uint64_t levels = 1 + rng.below(n);
    std::vector<double> s(n);
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      y[i] = rng.uniform() < 0.35 ? 1 : 0;
      s[i] = static_cast<double>(rng.below(levels)) / static_cast<double>(levels);
    }
    y[0] = 1;
    y[n - 1] = 0;
    std::set<double> distinct(s.begin(), s.end());
    with_ties += distinct.size() < n;
    const ScoredSet set = make_scored(s, y);
    const double a = auc(set);
    exact += a == testing::brute_force_auc(s, y);
    worst_trapezoid = std::max(worst_trapezoid, std::abs(trapezoid_area(roc_curve(set)) - a));
  }
  std::printf("  1000 sets (%zu with ties): %zu exact matches, max |trapezoid - auc| = %.2e\n", with_ties, exact,
              worst_trapezoid);
  v.check(exact == 1000, std::to_string(1000 - exact) + " sets differ from brute force");
  v.check(worst_trapezoid <= 1e-12, "trapezoid area deviates by " + fmt("%.3e", worst_trapezoid));
  return v;
}

// ---- 3 ---------------------------------------------------------------------

Verdict shape_laws() {
  Verdict v;
  Tape tape(Mode::Eval, false);
  std::size_t combos = 0;
  for (std::size_t in = 1; in <= 16; ++in)
    for (std::size_t k = 1; k <= 5; ++k)
      for (std::size_t s = 1; s <= 3; ++s)
        for (std::size_t p = 0; p <= 2; ++p) {
          ++combos;
          // Count the window placements directly.
          std::size_t want = 0;
          for (std::size_t start = 0; start + k <= in + 2 * p; start += s) ++want;
          const std::string where = "in=" + std::to_string(in) + " k=" + std::to_string(k) +
                                    " s=" + std::to_string(s) + " p=" + std::to_string(p);
          const ConvSpec spec = ConvSpec::uniform(1, 1, 1, k, s, p);
          const Tensor x(Shape{1, 1, in});
          const Tensor w = create(spec.weight_shape(), Init::constant(1.0f));
          if (want == 0) {
            bool threw = false;
            try {
              ops::conv(tape, Tape::constant(x), Tape::constant(w), nullptr, spec);
            } catch (const InvalidShape&) {
              threw = true;
            }
            v.check(threw, "conv accepted an empty output at " + where);
            continue;
          }
          const Tensor y = ops::conv(tape, Tape::constant(x), Tape::constant(w), nullptr, spec).value;
          v.check(y.shape() == Shape{1, 1, want}, "conv extent wrong at " + where);
          if (p == 0 && k <= in) {
            const Tensor m = ops::maxpool(tape, Tape::constant(x), PoolSpec{{k}, {s}}).value;
            const Tensor a = ops::avgpool(tape, Tape::constant(x), PoolSpec{{k}, {s}}).value;
            v.check(m.shape() == Shape{1, 1, want} && a.shape() == m.shape(), "pool extent wrong at " + where);
          }
        }
  // 2-D and 3-D use the same law per axis.
  for (std::size_t in = 3; in <= 16; in += 4) {
    const ConvSpec spec = ConvSpec::uniform(3, 2, 3, 3, 2, 1);
    const Tensor y = ops::conv(tape, Tape::constant(Tensor(Shape{1, 2, in, in + 1, in + 2})),
                               Tape::constant(create(spec.weight_shape(), Init::constant(0.1f))), nullptr, spec)
                         .value;
    v.check(y.shape() == Shape{1, 3, (in - 1) / 2 + 1, in / 2 + 1, (in + 1) / 2 + 1}, "3-D conv extent wrong");
  }

  Rng rng(7);
  std::size_t round_trips = 0;
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t rank = 1 + rng.below(5), axis = rng.below(rank);
    Shape base;
    for (std::size_t d = 0; d < rank; ++d) base.push_back(1 + rng.below(4));
    std::vector<Var> parts;
    std::vector<std::size_t> sizes;
    for (std::size_t i = 0, n = 1 + rng.below(4); i < n; ++i) {
      Shape s = base;
      s[axis] = 1 + rng.below(4);
      sizes.push_back(s[axis]);
      parts.push_back(Tape::constant(create(s, Init::uniform(rng.next_u64(), -1e6f, 1e6f))));
    }
    const auto back = ops::split(tape, ops::concat(tape, parts, axis), axis, sizes);
    bool same = back.size() == parts.size();
    for (std::size_t i = 0; same && i < parts.size(); ++i) same = back[i].value.bit_equal(parts[i].value);
    round_trips += same;
  }
  std::printf("  %zu conv/pool parameter combinations, %zu/500 concat-split round trips bit-exact\n", combos,
              round_trips);
  v.check(round_trips == 500, "concat/split round trip not bit-exact");
  return v;
}

// ---- 4 ---------------------------------------------------------------------

Verdict split_integrity() {
  Verdict v;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    SynthConfig c;
    c.volume_grid = {4, 16, 16};
    c.lso_grid = {16, 16};
    c.seed = 500 + seed;
    const auto infos = sample_infos(synth_generate(c));
    const std::string where = " (seed " + std::to_string(seed) + ")";
    DatasetSplit split;
    try {
      split = split_by_patient(infos, kDefaultSplitFractions, seed);
    } catch (const InfeasibleSplit& e) {
      v.check(false, std::string(e.what()) + where);
      continue;
    }
    std::map<std::string, const SampleInfo*> by_id;
    for (const auto& s : infos) by_id[s.id] = &s;
    std::map<std::string, SplitPart> owner;
    std::set<std::string> seen;
    for (SplitPart part : kSplitParts) {
      std::size_t pos = 0, neg = 0;
      for (const auto& id : split.part(part)) {
        v.check(seen.insert(id).second, "acquisition " + id + " listed twice" + where);
        const SampleInfo& s = *by_id.at(id);
        const auto [it, fresh] = owner.emplace(s.patient_id, part);
        v.check(it->second == part, "patient " + s.patient_id + " in two parts" + where);
        (s.label ? pos : neg)++;
      }
      v.check(pos >= 1 && neg >= 1, std::string(split_part_name(part)) + " lacks a class" + where);
    }
    v.check(seen.size() == infos.size(), "split is not a complete partition" + where);
  }
  std::printf("  100 seeds: patient-disjoint, complete, both classes per part: %s\n", v.passed() ? "yes" : "no");

  const Manifest m = load_manifest(std::filesystem::path(MMF_TEST_DATA_DIR) / "reference_cohort" / "manifest.jsonl");
  const auto infos = m.sample_infos();
  const DatasetSplit split = m.recorded_split();
  validate_split(infos, split);
  std::map<std::string, std::string> patient;
  for (const auto& s : infos) patient[s.id] = s.patient_id;
  std::set<std::string> all_patients;
  for (const auto& s : infos) all_patients.insert(s.patient_id);
  std::string counts;
  const std::array<std::size_t, 3> want_acq{88, 28, 35}, want_pat{31, 14, 19};
  for (SplitPart part : kSplitParts) {
    std::set<std::string> pats;
    for (const auto& id : split.part(part)) pats.insert(patient[id]);
    const auto i = static_cast<std::size_t>(part);
    counts += " " + std::string(split_part_name(part)) + "=" + std::to_string(split.part(part).size()) + "/" +
              std::to_string(pats.size());
    v.check(split.part(part).size() == want_acq[i] && pats.size() == want_pat[i],
            std::string(split_part_name(part)) + " cardinality differs from 88/28/35 acquisitions, 31/14/19 patients");
  }
  v.check(infos.size() == 151 && all_patients.size() == 64, "stored cohort is not 151 acquisitions / 64 patients");
  v.check(patient_counts(64, kDefaultSplitFractions) == want_pat, "default fractions do not give 31/14/19 patients");
  std::printf("  stored cohort replay (acquisitions/patients):%s\n", counts.c_str());
  return v;
}

// ---- 5 ---------------------------------------------------------------------

Verdict trainability() {
  Verdict v;
  SynthConfig synth;  // default grids
  synth.n_patients = 40;
  synth.total_acquisitions = 60;
  synth.positive_rate = 0.4;
  synth.seed = 77;
  std::vector<Acquisition> sixteen;
  std::size_t pos = 0, neg = 0;
  for (auto& a : preprocessed(synth)) {
    if ((a.label() && pos < 8) || (!a.label() && neg < 8)) {
      (a.label() ? pos : neg)++;
      sixteen.push_back(std::move(a));
    }
  }
  v.check(sixteen.size() == 16, "could not assemble a balanced 16-sample set");
  for (const Method& m : six_methods()) {
    TrainConfig config;
    config.max_epochs = 500;
    config.patience = 500;
    config.target_loss = 0.05;
    auto model = build_model(m, "mini-res-a", 1);
    TrainOptions options;
    options.validator = [](Classifier&, std::size_t) { return 0.5; };
    const auto t0 = Clock::now();
    const TrainHistory h = train(*model, sixteen, sixteen, config, options);
    const double loss = h.records.empty() ? NAN : h.records.back().train_loss;
    std::printf("  overfit %-16s epochs=%-3zu final BCE=%.4f (%.1f s)\n", method_name(m).c_str(), h.records.size(),
                loss, seconds_since(t0));
    v.check(loss < 0.05, method_name(m) + " did not reach BCE < 0.05 in 500 epochs");
  }

  const SynthConfig full{};  // the default dataset
  const auto data = preprocessed(full);
  const auto infos = sample_infos(data);
  const DatasetSplit split = split_by_patient(infos, kDefaultSplitFractions, 0);
  const auto train_set = pick(data, part_indices(infos, split, SplitPart::Train));
  const auto val_set = pick(data, part_indices(infos, split, SplitPart::Val));
  for (const Method& m : six_methods()) {
    auto model = build_model(m, "mini-res-a", 0);
    const auto t0 = Clock::now();
    const TrainHistory h = train(*model, train_set, val_set, TrainConfig{});
    const double secs = seconds_since(t0);
    std::printf("  full run %-15s epochs=%-3zu stop=%-10s %.1f s\n", method_name(m).c_str(), h.records.size(),
                std::string(stop_reason_name(h.stop)).c_str(), secs);
    v.check(secs < 1800.0, method_name(m) + " full run took " + fmt("%.0f", secs) + " s");
    v.check(h.stop != StopReason::Diverged, method_name(m) + " diverged on the default dataset");
  }
  return v;
}

// ---- 6 ---------------------------------------------------------------------

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// The margin compares against the best single-modality method, each method
// summarised by its median over seeds (a fixed baseline row, as in a results
// table). The per-seed maximum over modalities is printed too; it picks the
// modality on the test set and so is biased upward.
Verdict fusion_benefit(std::size_t seeds) {
  Verdict v;
  const std::vector<Method> methods{Modality::Structure, Modality::Flow, Modality::LSO, FusionStrategy::Early,
                                    FusionStrategy::Hierarchical};
  const std::vector<std::string> singles{"single-structure", "single-flow", "single-lso"};
  std::map<std::string, std::vector<double>> test_aucs, heldout_aucs;
  std::vector<double> per_seed_best_single;
  for (std::size_t seed = 0; seed < seeds; ++seed) {
    SynthConfig synth;  // default: complementary mode
    synth.seed = 1000 + seed;
    const auto data = preprocessed(synth);
    const auto infos = sample_infos(data);
    const DatasetSplit split = split_by_patient(infos, kDefaultSplitFractions, seed);
    const auto train_set = pick(data, part_indices(infos, split, SplitPart::Train));
    const auto val_set = pick(data, part_indices(infos, split, SplitPart::Val));
    const auto test_set = pick(data, part_indices(infos, split, SplitPart::Test));
    // Independent cohort from the same distribution, only to show how much of
    // a gap is test-set noise. Not part of the verdict.
    SynthConfig big = synth;
    big.n_patients = 200;
    big.total_acquisitions = 400;
    big.seed = 90000 + seed;
    const auto heldout = preprocessed(big);
    std::string line, extra;
    for (const Method& m : methods) {
      TrainConfig config;
      config.seed = seed;
      auto model = build_model(m, "mini-res-a", seed);
      const TrainHistory h = train(*model, train_set, val_set, config);
      const std::string name = method_name(m);
      test_aucs[name].push_back(auc(scored_set(*model, test_set)));
      heldout_aucs[name].push_back(auc(scored_set(*model, heldout)));
      line += " " + name + "=" + fmt("%.3f", test_aucs[name].back()) + "(e" + std::to_string(h.best_epoch) + ")";
      extra += " " + fmt("%.3f", heldout_aucs[name].back());
    }
    double best = 0.0;
    for (const auto& s : singles) best = std::max(best, test_aucs[s].back());
    per_seed_best_single.push_back(best);
    std::printf("  seed %zu:%s\n           held-out(400):%s\n", seed, line.c_str(), extra.c_str());
    std::fflush(stdout);
  }
  std::string best_name;
  double single = -1.0;
  for (const auto& s : singles) {
    if (median(test_aucs[s]) > single) {
      single = median(test_aucs[s]);
      best_name = s;
    }
  }
  const double hier = median(test_aucs["hierarchical"]), ear = median(test_aucs["early"]);
  std::printf("  median test AUC:");
  for (const Method& m : methods) std::printf(" %s %.3f", method_name(m).c_str(), median(test_aucs[method_name(m)]));
  std::printf("\n  median held-out AUC:");
  for (const Method& m : methods) std::printf(" %s %.3f", method_name(m).c_str(), median(heldout_aucs[method_name(m)]));
  std::printf("\n  hierarchical - best single method (%s): %+.3f; hierarchical - early: %+.3f\n", best_name.c_str(),
              hier - single, hier - ear);
  std::printf("  (median of per-seed best single modality: %.3f, margin %+.3f)\n", median(per_seed_best_single),
              hier - median(per_seed_best_single));
  v.check(hier - single >= 0.03, "hierarchical margin over " + best_name + " " + fmt("%+.3f", hier - single) + " < 0.03");
  v.check(hier >= ear, "hierarchical median " + fmt("%.3f", hier) + " below early fusion " + fmt("%.3f", ear));
  return v;
}

// ---- 7 ---------------------------------------------------------------------

// Test set with exactly `credit` winning (positive, negative) pairs out of
// 25 x 40 = 1000, so the AUC is credit / 1000 exactly. The validation set is
// the same scores.
ScoredSet set_with_auc(std::size_t credit, const std::string& prefix) {
  std::vector<double> scores;
  std::vector<int> labels;
  for (std::size_t j = 0; j < 40; ++j) {
    scores.push_back((static_cast<double>(j) + 0.5) / 41.0);
    labels.push_back(0);
  }
  // Positive i beats b_i negatives; spread the credit as evenly as possible.
  for (std::size_t i = 0; i < 25; ++i) {
    const std::size_t b = credit / 25 + (i < credit % 25 ? 1 : 0);
    scores.push_back(static_cast<double>(b) / 41.0);
    labels.push_back(1);
  }
  ScoredSet s = make_scored(scores, labels);
  for (std::size_t i = 0; i < s.size(); ++i) s.ids.push_back(prefix + std::to_string(i));
  return s;
}

int run_tool(const std::string& args, std::string* output = nullptr) {
  testing::TempDir tmp;
  const std::string cmd =
      std::string(MMFUSION_EXE) + " --log-level error " + args + " > " + (tmp / "out").string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  if (output) {
    std::ifstream is(tmp / "out");
    std::stringstream ss;
    ss << is.rdbuf();
    *output = ss.str();
  }
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string read_file(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& p, const std::string& text) {
  std::ofstream os(p, std::ios::binary | std::ios::trunc);
  os << text;
}

Verdict report_fidelity() {
  Verdict v;
  testing::TempDir dir;
  write_file(dir / "config.json", R"({
  "version": 1,
  "output_dir": "exp",
  "data": {"synth": {}},
  "runs": [
    {"name": "single-structure", "method": "single", "modality": "structure", "backbone": "mini-res-b"},
    {"name": "hierarchical", "method": "hierarchical", "backbone": "mini-dense-a"},
    {"name": "early", "method": "early", "backbone": "mini-dense-a"}
  ],
  "baseline": "single-structure"
})");
  const std::map<std::string, std::size_t> credit{{"single-structure", 859}, {"hierarchical", 911}, {"early", 865}};
  for (const auto& [run, c] : credit) {
    std::filesystem::create_directories(dir.path() / "exp" / "runs" / run);
    const ScoredSet s = set_with_auc(c, run + "-");
    v.check(auc(s) == static_cast<double>(c) / 1000.0, "crafted scores for " + run + " miss their AUC");
    save_scores(dir.path() / "exp" / "runs" / run / "scores.csv", {s, s});
  }
  std::string out;
  const int code = run_tool("compare " + (dir / "config.json").string(), &out);
  v.check(code == kExitOk, "compare exited with " + std::to_string(code) + ": " + out);
  const std::string csv = read_file(dir.path() / "exp" / "report.csv");
  std::istringstream lines(csv);
  std::string header;
  std::getline(lines, header);
  std::printf("  %s\n", header.c_str());
  v.check(header == "method,backbone,auc,sensitivity,specificity,improvement", "header differs: " + header);
  std::map<std::string, std::vector<std::string>> rows;
  for (std::string line; std::getline(lines, line);) {
    std::printf("  %s\n", line.c_str());
    std::vector<std::string> cols;
    std::stringstream ss(line);
    for (std::string c; std::getline(ss, c, ',');) cols.push_back(c);
    if (cols.size() == 6) rows[cols[0]] = cols;
  }
  const auto col = [&](const std::string& run, std::size_t i) {
    return rows.count(run) ? rows[run][i] : std::string("<missing>");
  };
  v.check(col("single-structure", 5) == "Baseline", "baseline row improvement is " + col("single-structure", 5));
  v.check(col("hierarchical", 5) == "+0.052", "hierarchical improvement is " + col("hierarchical", 5));
  v.check(col("early", 5) == "+0.006", "early improvement is " + col("early", 5));
  v.check(col("hierarchical", 2) == "0.911" && col("early", 2) == "0.865" && col("single-structure", 2) == "0.859",
          "AUC column does not carry the stored values");
  v.check(col("single-structure", 1) == "mini-res-b", "backbone column wrong");
  v.check(read_file(dir.path() / "exp" / "roc.svg").find("</svg>") != std::string::npos, "roc.svg not written");
  return v;
}

// ---- 8 ---------------------------------------------------------------------

Verdict determinism() {
  Verdict v;
  testing::TempDir dir;
  const std::string config = R"({
  "version": 1,
  "output_dir": "exp",
  "data": {"synth": {"n_patients": 20, "total_acquisitions": 44, "volume_grid": [8, 32, 32], "lso_grid": [32, 32],
                     "positive_rate": 0.3, "seed": 11}},
  "split": {"seed": 4},
  "runs": [
    {"name": "structure", "method": "single", "modality": "structure", "train": {"max_epochs": 3, "seed": 2}},
    {"name": "intermediate", "method": "intermediate", "train": {"max_epochs": 3, "seed": 2}},
    {"name": "hierarchical", "method": "hierarchical", "backbone": "mini-dense-a", "train": {"max_epochs": 3, "seed": 2}}
  ],
  "baseline": "structure"
})";
  std::vector<std::string> reports;
  for (const char* sub : {"first", "second"}) {
    std::filesystem::create_directories(dir.path() / sub);
    const auto cfg = dir.path() / sub / "config.json";
    write_file(cfg, config);
    for (const char* cmd : {"synth", "run", "compare"}) {
      std::string out;
      const int code = run_tool(std::string(cmd) + " " + cfg.string(), &out);
      v.check(code == kExitOk, std::string(cmd) + " exited with " + std::to_string(code) + ": " + out);
    }
    reports.push_back(read_file(dir.path() / sub / "exp" / "report.csv"));
  }
  std::printf("%s", reports[0].c_str());
  v.check(!reports[0].empty(), "no report written");
  v.check(reports[0] == reports[1], "report.csv differs between repeated pipelines");
  return v;
}

// ---- 9 ---------------------------------------------------------------------

Verdict checkpoint_round_trip() {
  Verdict v;
  const auto data = testing::small_cohort(16, 9);
  const ModalityBatch probe = make_batch(data);
  testing::TempDir dir;
  for (FusionStrategy s : kFusionStrategies) {
    auto model = build_model(s, "mini-dense-a", 3);
    TrainConfig config;
    config.max_epochs = 2;
    TrainOptions options;
    options.validator = [](Classifier&, std::size_t e) { return static_cast<double>(e); };
    train(*model, data, data, config, options);
    const auto path = dir / (std::string(strategy_name(s)) + ".ckpt");
    save_model(path, *model);
    const LoadedModel loaded = load_model(path);
    const auto before = predict(*model, probe), after = predict(*loaded.model, probe);
    const bool same = before.size() == after.size() &&
                      std::memcmp(before.data(), after.data(), before.size() * sizeof(float)) == 0;
    std::printf("  %-13s %zu probe predictions %s\n", std::string(strategy_name(s)).c_str(), after.size(),
                same ? "bit-identical" : "DIFFER");
    v.check(same, std::string(strategy_name(s)) + " predictions changed after reload");
    v.check(loaded.model->method() == Method(s), "reloaded model has the wrong strategy");
  }
  return v;
}

struct Criterion {
  int id;
  const char* title;
  std::function<Verdict()> run;
};

}  // namespace
}  // namespace mmf

int main(int argc, char** argv) {
  using namespace mmf;
  int only = 0;
  std::size_t seeds = 5;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--criterion" && i + 1 < argc) {
      only = std::atoi(argv[++i]);
    } else if (a == "--seeds" && i + 1 < argc) {
      seeds = static_cast<std::size_t>(std::atoi(argv[++i]));
    } else {
      std::fprintf(stderr, "usage: acceptance [--criterion N] [--seeds K]\n");
      return 2;
    }
  }
  log::set_min_level(log::Level::Error);

  const std::vector<Criterion> criteria{
      {1, "gradient suite matches finite differences", gradient_suite},
      {2, "AUC equals brute-force pair counting", auc_oracle},
      {3, "conv/pool shape laws and concat/split round trip", shape_laws},
      {4, "patient-grouped split integrity and cohort replay", split_integrity},
      {5, "all six methods overfit 16 samples; full runs under 30 min", trainability},
      {6, "hierarchical fusion beats the best single modality", [&] { return fusion_benefit(seeds); }},
      {7, "report schema and improvement arithmetic", report_fidelity},
      {8, "synth-run-compare is byte-reproducible", determinism},
      {9, "checkpoint round trip preserves predictions", checkpoint_round_trip},
  };
  if (only != 0 && (only < 1 || only > static_cast<int>(criteria.size()))) {
    std::fprintf(stderr, "no criterion %d\n", only);
    return 2;
  }
  bool all_passed = true;
  for (const auto& c : criteria) {
    if (only != 0 && c.id != only) continue;
    std::printf("criterion %d: %s\n", c.id, c.title);
    std::fflush(stdout);
    const auto t0 = Clock::now();
    Verdict v;
    try {
      v = c.run();
    } catch (const std::exception& e) {
      v.failures.push_back(std::string("exception: ") + e.what());
    }
    for (const auto& f : v.failures) std::printf("  failure: %s\n", f.c_str());
    std::printf("%s criterion %d (%.1f s)\n", v.passed() ? "PASS" : "FAIL", c.id, seconds_since(t0));
    std::fflush(stdout);
    all_passed &= v.passed();
  }
  return all_passed ? 0 : 1;
}
