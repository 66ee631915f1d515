#include "mmf/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "json.hpp"
#include "mmf/checkpoint.hpp"
#include "mmf/error.hpp"
#include "mmf/log.hpp"
#include "mmf/manifest.hpp"

namespace mmf {

namespace {

using nlohmann::json;

// Typed access to one JSON object; unknown keys are rejected by finish().
class Fields {
 public:
  Fields(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError(where_ + ": expected an object");
  }

  bool has(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key) && !j_.at(key).is_null();
  }

  template <typename T>
  T get(const std::string& key, T fallback) {
    return has(key) ? convert<T>(key) : fallback;
  }

  template <typename T>
  T require(const std::string& key) {
    if (!has(key)) throw ConfigError(where_ + ": missing required key '" + key + "'");
    return convert<T>(key);
  }

  const json& raw(const std::string& key) {
    seen_.insert(key);
    return j_.at(key);
  }

  std::string where(const std::string& key) const { return where_ + "." + key; }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.count(key)) throw ConfigError(where_ + ": unknown key '" + key + "'");
    }
  }

 private:
  template <typename T>
  T convert(const std::string& key) {
    try {
      return j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError(where(key) + ": wrong type " + std::string(j_.at(key).type_name()));
    }
  }

  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

template <std::size_t N>
std::array<std::size_t, N> grid(Fields& f, const std::string& key, std::array<std::size_t, N> fallback) {
  if (!f.has(key)) return fallback;
  const auto v = f.get<std::vector<std::size_t>>(key, {});
  if (v.size() != N) throw ConfigError(f.where(key) + ": expected " + std::to_string(N) + " extents");
  std::array<std::size_t, N> out{};
  std::copy(v.begin(), v.end(), out.begin());
  for (std::size_t e : out) {
    if (e == 0) throw ConfigError(f.where(key) + ": extents must be >= 1");
  }
  return out;
}

SynthConfig parse_synth(const json& j) {
  Fields f(j, "data.synth");
  SynthConfig s;
  s.n_patients = f.get("n_patients", s.n_patients);
  s.min_acquisitions_per_patient = f.get("min_acquisitions_per_patient", s.min_acquisitions_per_patient);
  s.max_acquisitions_per_patient = f.get("max_acquisitions_per_patient", s.max_acquisitions_per_patient);
  s.total_acquisitions = f.get("total_acquisitions", s.total_acquisitions);
  s.volume_grid = grid<3>(f, "volume_grid", s.volume_grid);
  s.lso_grid = grid<2>(f, "lso_grid", s.lso_grid);
  s.positive_rate = f.get("positive_rate", s.positive_rate);
  s.s_structure = f.get("s_structure", s.s_structure);
  s.s_flow = f.get("s_flow", s.s_flow);
  s.s_lso = f.get("s_lso", s.s_lso);
  s.noise_sigma = f.get("noise_sigma", s.noise_sigma);
  s.mode = parse_complementarity(f.get<std::string>("mode", std::string(complementarity_name(s.mode))));
  s.seed = f.get("seed", s.seed);
  f.finish();
  return s;
}

TrainConfig parse_train(const json& j, const std::string& where) {
  Fields f(j, where);
  TrainConfig t;
  const std::string opt = f.get<std::string>("optimizer", "adam");
  if (opt == "adam") {
    optim::AdamConfig a;
    a.lr = f.get("lr", a.lr);
    a.beta1 = f.get("beta1", a.beta1);
    a.beta2 = f.get("beta2", a.beta2);
    a.eps = f.get("eps", a.eps);
    if (f.has("momentum")) throw ConfigError(where + ": momentum applies to sgd only");
    t.optimizer = a;
  } else if (opt == "sgd") {
    optim::SgdConfig s;
    s.lr = f.get("lr", s.lr);
    s.momentum = f.get("momentum", s.momentum);
    for (const char* k : {"beta1", "beta2", "eps"}) {
      if (f.has(k)) throw ConfigError(where + ": " + k + " applies to adam only");
    }
    t.optimizer = s;
  } else {
    throw ConfigError(where + ".optimizer: expected adam or sgd, got '" + opt + "'");
  }
  t.batch_size = f.get("batch_size", t.batch_size);
  t.max_epochs = f.get("max_epochs", t.max_epochs);
  t.patience = f.get("patience", t.patience);
  if (f.has("pos_class_weight")) t.pos_class_weight = f.get<double>("pos_class_weight", 1.0);
  if (f.has("target_loss")) t.target_loss = f.get<double>("target_loss", 0.0);
  t.seed = f.get("seed", t.seed);
  f.finish();
  try {
    t.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(where + ": " + e.what());
  }
  return t;
}

RunConfig parse_run(const json& j, std::size_t index) {
  const std::string where = "runs[" + std::to_string(index) + "]";
  Fields f(j, where);
  RunConfig r;
  r.name = f.require<std::string>("name");
  const std::string method = f.require<std::string>("method");
  if (method == "single") {
    r.method = parse_modality(f.require<std::string>("modality"));
  } else {
    r.method = parse_method(method);
    if (f.has("modality")) throw ConfigError(where + ": modality only applies to method 'single'");
  }
  r.backbone = f.get<std::string>("backbone", r.backbone);
  const auto& presets = nn::preset_names();
  if (std::find(presets.begin(), presets.end(), r.backbone) == presets.end()) {
    throw ConfigError(where + ": unknown backbone preset '" + r.backbone + "'");
  }
  if (f.has("train")) r.train = parse_train(f.raw("train"), where + ".train");
  f.finish();
  return r;
}

std::string csv_escape_free(const std::string& s, const std::string& what) {
  if (s.find_first_of(",\n\r\"") != std::string::npos) throw FormatError(what + " must not contain commas or quotes");
  return s;
}

std::vector<Acquisition> select(const std::vector<Acquisition>& all, const std::vector<std::size_t>& idx) {
  std::vector<Acquisition> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(all[i]);
  return out;
}

RunScores scores_from_checkpoint(const ExperimentConfig& config, const RunConfig& run, const PreparedData& data) {
  LoadedModel loaded = load_model(find_checkpoint(config, run.name));
  if (loaded.model->method() != run.method || loaded.model->preset() != run.backbone) {
    throw RunFailure("checkpoint of run '" + run.name + "' holds " + method_name(loaded.model->method()) + "/" +
                     loaded.model->preset() + ", config says " + method_name(run.method) + "/" + run.backbone);
  }
  return {scored_set(*loaded.model, data.val), scored_set(*loaded.model, data.test)};
}

}  // namespace

void ExperimentConfig::validate() const {
  if (output_dir.empty()) throw ConfigError("output_dir is required");
  if (synth.has_value() == manifest.has_value()) throw ConfigError("data: give exactly one of synth or manifest");
  if (synth) synth->validate();
  if (use_recorded_split && !manifest) throw ConfigError("split.use_recorded needs a manifest data source");
  if (runs.empty()) throw ConfigError("runs: at least one run is required");
  std::set<std::string> names;
  for (const auto& r : runs) {
    if (r.name.empty() || r.name.find_first_of("/\\,\"\n") != std::string::npos || r.name == "." || r.name == "..") {
      throw ConfigError("run name '" + r.name + "' is not usable as a directory name");
    }
    if (!names.insert(r.name).second) throw ConfigError("duplicate run name '" + r.name + "'");
    r.train.validate();
  }
  if (baseline.empty()) throw ConfigError("baseline is required");
  if (!names.count(baseline)) throw ConfigError("baseline '" + baseline + "' is not a run name");
  patient_counts(3, split_fractions);  // fraction sanity
}

const RunConfig& ExperimentConfig::run(const std::string& name) const {
  for (const auto& r : runs) {
    if (r.name == name) return r;
  }
  throw ConfigError("no run named '" + name + "'");
}

ExperimentConfig parse_experiment_config(const std::string& text, const std::filesystem::path& base_dir) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  Fields f(j, "config");
  const int version = f.require<int>("version");
  if (version != kExperimentConfigVersion) {
    throw ConfigError("unsupported config version " + std::to_string(version) + " (expected " +
                      std::to_string(kExperimentConfigVersion) + ")");
  }
  ExperimentConfig c;
  c.output_dir = base_dir / f.require<std::string>("output_dir");

  Fields data(f.raw("data"), "data");
  if (data.has("synth")) c.synth = parse_synth(data.raw("synth"));
  if (data.has("manifest")) c.manifest = base_dir / data.get<std::string>("manifest", "");
  data.finish();

  if (f.has("preprocess")) {
    Fields p(f.raw("preprocess"), "preprocess");
    c.preprocess.volume_grid = grid<3>(p, "volume_grid", c.preprocess.volume_grid);
    c.preprocess.lso_grid = grid<2>(p, "lso_grid", c.preprocess.lso_grid);
    p.finish();
  } else if (c.synth) {
    c.preprocess.volume_grid = c.synth->volume_grid;
    c.preprocess.lso_grid = c.synth->lso_grid;
  }

  if (f.has("split")) {
    Fields s(f.raw("split"), "split");
    if (s.has("fractions")) {
      const auto fr = s.get<std::vector<double>>("fractions", {});
      if (fr.size() != 3) throw ConfigError("split.fractions: expected three values (train, val, test)");
      std::copy(fr.begin(), fr.end(), c.split_fractions.begin());
    }
    c.split_seed = s.get("seed", c.split_seed);
    c.use_recorded_split = s.get("use_recorded", c.use_recorded_split);
    s.finish();
  }

  const json& runs = f.raw("runs");
  if (!runs.is_array()) throw ConfigError("runs: expected a list");
  for (std::size_t i = 0; i < runs.size(); ++i) c.runs.push_back(parse_run(runs[i], i));
  c.baseline = f.require<std::string>("baseline");
  f.finish();
  c.validate();
  return c;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read config " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_experiment_config(ss.str(), path.parent_path());
}

ExperimentLayout layout(const ExperimentConfig& config) { return {config.output_dir}; }

void cmd_synth(const ExperimentConfig& config, bool force) {
  if (!config.synth) throw ConfigError("the data source is a manifest; there is nothing to synthesize");
  const ExperimentLayout l = layout(config);
  if (std::filesystem::exists(l.data_dir()) && !std::filesystem::is_empty(l.data_dir())) {
    if (!force) throw ConfigError("dataset already exists at " + l.data_dir().string() + " (pass --force to regenerate)");
    std::filesystem::remove_all(l.data_dir());
  }
  const auto acquisitions = synth_generate(*config.synth);
  write_dataset(l.data_dir(), acquisitions);
  std::size_t positives = 0;
  std::set<std::string> patients;
  for (const auto& a : acquisitions) {
    positives += static_cast<std::size_t>(a.label());
    patients.insert(a.patient_id);
  }
  log::info("synth_done", {{"dir", l.data_dir().string()},
                           {"acquisitions", acquisitions.size()},
                           {"patients", patients.size()},
                           {"positives", positives}});
}

PreparedData prepare_data(const ExperimentConfig& config) {
  const ExperimentLayout l = layout(config);
  const std::filesystem::path manifest_path = config.manifest ? *config.manifest : l.synth_manifest();
  if (!std::filesystem::exists(manifest_path)) {
    throw RunFailure("dataset manifest " + manifest_path.string() + " not found" +
                     (config.synth ? " (run the synth command first)" : ""));
  }
  Manifest manifest;
  std::vector<Acquisition> all;
  try {
    manifest = load_manifest(manifest_path);
    for (std::size_t i = 0; i < manifest.records.size(); ++i) {
      all.push_back(preprocess(manifest.resolve(i), config.preprocess));
    }
  } catch (const FormatError& e) {
    throw RunFailure(e.what());
  }
  const auto infos = manifest.sample_infos();
  PreparedData data;
  data.split = config.use_recorded_split ? manifest.recorded_split()
                                         : split_by_patient(infos, config.split_fractions, config.split_seed);
  data.train = select(all, part_indices(infos, data.split, SplitPart::Train));
  data.val = select(all, part_indices(infos, data.split, SplitPart::Val));
  data.test = select(all, part_indices(infos, data.split, SplitPart::Test));
  return data;
}

std::vector<RunOutcome> cmd_run(const ExperimentConfig& config, std::size_t jobs,
                                const std::vector<std::string>& only) {
  std::vector<const RunConfig*> selected;
  for (const auto& r : config.runs) {
    if (only.empty() || std::find(only.begin(), only.end(), r.name) != only.end()) selected.push_back(&r);
  }
  for (const auto& name : only) config.run(name);
  const PreparedData data = prepare_data(config);
  const ExperimentLayout l = layout(config);
  std::filesystem::create_directories(l.root);
  save_split(l.split_file(), data.split);

  std::vector<RunOutcome> outcomes(selected.size());
  const auto train_one = [&](std::size_t i) {
    const RunConfig& run = *selected[i];
    RunOutcome& out = outcomes[i];
    out.name = run.name;
    try {
      const auto dir = l.run_dir(run.name);
      std::filesystem::remove_all(dir);
      std::filesystem::create_directories(dir);
      auto model = build_model(run.method, run.backbone, run.train.seed);
      TrainOptions options;
      options.checkpoint_dir = dir;
      options.checkpoint_meta = {{"run", run.name}};
      log::info("run_start", {{"run", run.name},
                              {"method", method_name(run.method)},
                              {"backbone", run.backbone},
                              {"parameters", model->parameter_count()}});
      out.history = train(*model, data.train, data.val, run.train, options);
      if (out.history.stop == StopReason::Diverged) {
        out.failed = true;
        out.error = out.history.message;
      }
      log::info("run_done", {{"run", run.name},
                             {"stop", stop_reason_name(out.history.stop)},
                             {"best_epoch", out.history.best_epoch},
                             {"epochs", out.history.records.size()}});
    } catch (const std::exception& e) {
      out.failed = true;
      out.error = e.what();
    }
    if (out.failed) log::emit(log::Level::Error, "run_failed", {{"run", run.name}, {"error", out.error}});
  };

  if (jobs <= 1 || selected.size() <= 1) {
    for (std::size_t i = 0; i < selected.size(); ++i) train_one(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> workers;
    for (std::size_t w = 0; w < std::min(jobs, selected.size()); ++w) {
      workers.emplace_back([&] {
        for (std::size_t i = next++; i < selected.size(); i = next++) train_one(i);
      });
    }
    for (auto& t : workers) t.join();
  }
  return outcomes;
}

std::filesystem::path find_checkpoint(const ExperimentConfig& config, const std::string& run) {
  const auto dir = layout(config).run_dir(run);
  std::vector<std::filesystem::path> found;
  if (std::filesystem::is_directory(dir)) {
    for (const auto& e : std::filesystem::directory_iterator(dir)) {
      const std::string name = e.path().filename().string();
      if (name.starts_with("model-") && name.ends_with(".ckpt")) found.push_back(e.path());
    }
  }
  if (found.empty()) throw RunFailure("run '" + run + "' has no checkpoint in " + dir.string());
  std::sort(found.begin(), found.end());
  return found.back();
}

void save_scores(const std::filesystem::path& path, const RunScores& scores) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw Error("cannot write " + path.string());
  os << "split,id,label,score\n";
  char buf[64];
  for (const auto& [part, set] : {std::pair<const char*, const ScoredSet*>{"val", &scores.val}, {"test", &scores.test}}) {
    for (std::size_t i = 0; i < set->size(); ++i) {
      std::snprintf(buf, sizeof(buf), "%.17g", set->scores[i]);
      os << part << "," << csv_escape_free(set->ids.at(i), "acquisition id") << "," << set->labels[i] << "," << buf
         << "\n";
    }
  }
}

RunScores load_scores(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw FormatError("cannot read " + path.string());
  std::string line;
  if (!std::getline(is, line) || line != "split,id,label,score") {
    throw FormatError(path.string() + ": expected header split,id,label,score");
  }
  RunScores s;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::stringstream ss(line);
    for (std::string c; std::getline(ss, c, ',');) cols.push_back(c);
    if (cols.size() != 4) throw FormatError(path.string() + ":" + std::to_string(lineno) + ": expected 4 columns");
    ScoredSet* set = cols[0] == "val" ? &s.val : cols[0] == "test" ? &s.test : nullptr;
    if (!set) throw FormatError(path.string() + ":" + std::to_string(lineno) + ": split must be val or test");
    try {
      set->ids.push_back(cols[1]);
      set->labels.push_back(std::stoi(cols[2]));
      set->scores.push_back(std::stod(cols[3]));
    } catch (const std::logic_error&) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": bad number");
    }
  }
  return s;
}

MetricsReport cmd_compare(const ExperimentConfig& config) {
  const ExperimentLayout l = layout(config);
  std::optional<PreparedData> data;  // loaded only when some run lacks cached scores
  std::vector<ReportRow> rows;
  std::vector<RocSeries> curves;
  for (const auto& run : config.runs) {
    RunScores scores;
    const auto cache = l.scores_file(run.name);
    if (std::filesystem::exists(cache)) {
      scores = load_scores(cache);
    } else {
      find_checkpoint(config, run.name);
      if (!data) data = prepare_data(config);
      scores = scores_from_checkpoint(config, run, *data);
      save_scores(cache, scores);
    }
    try {
      const double threshold = operating_point(scores.val);
      const SensSpec ss = sens_spec(scores.test, threshold);
      rows.push_back({run.name, run.backbone, auc(scores.test), ss.sensitivity, ss.specificity, 0.0, false});
      curves.push_back({run.name, roc_curve(scores.test)});
    } catch (const UndefinedMetric& e) {
      throw RunFailure("run '" + run.name + "': " + e.what());
    }
  }
  MetricsReport report = build_report(std::move(rows), config.baseline);
  std::filesystem::create_directories(l.root);
  const auto write = [](const std::filesystem::path& p, const std::string& text) {
    std::ofstream os(p, std::ios::binary | std::ios::trunc);
    if (!os) throw Error("cannot write " + p.string());
    os << text;
  };
  write(l.report_csv(), report.csv());
  write(l.report_txt(), report.text());
  write(l.roc_svg(), roc_svg(curves));
  return report;
}

}  // namespace mmf
