#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "mmf/checkpoint.hpp"
#include "mmf/error.hpp"
#include "mmf/experiment.hpp"
#include "mmf/metrics.hpp"
#include "mmf/synth.hpp"
#include "mmf/tensor_io.hpp"

namespace py = pybind11;
using namespace mmf;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

py::array_t<float> to_numpy(const Tensor& t) {
  py::array_t<float> out(std::vector<py::ssize_t>(t.shape().begin(), t.shape().end()));
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

Tensor from_numpy(const FloatArray& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor(shape, std::vector<float>(a.data(), a.data() + a.size()));
}

ScoredSet scored(const std::vector<double>& scores, const std::vector<int>& labels) {
  return make_scored(scores, labels);
}

py::dict acquisition_dict(const Acquisition& a) {
  py::dict d;
  d["id"] = a.id;
  d["patient_id"] = a.patient_id;
  d["icdr_grade"] = a.icdr_grade;
  d["label"] = a.label();
  d["structure"] = to_numpy(a.structure);
  d["flow"] = to_numpy(a.flow);
  d["lso"] = to_numpy(a.lso);
  return d;
}

// A loaded checkpoint; predictions take one [N, D, H, W] array per volume
// modality and [N, H, W] for LSO. Modalities the model does not use may be None.
class Model {
 public:
  explicit Model(const std::filesystem::path& path) : loaded_(load_model(path)) {}

  std::string method() const { return method_name(loaded_.model->method()); }
  std::string backbone() const { return loaded_.model->preset(); }
  std::size_t parameter_count() const { return loaded_.model->parameter_count(); }
  const std::map<std::string, std::string>& meta() const { return loaded_.meta; }

  std::vector<float> predict(std::optional<FloatArray> structure, std::optional<FloatArray> flow,
                             std::optional<FloatArray> lso) {
    ModalityBatch batch;
    // Inputs carry no channel axis; the models expect one.
    const auto with_channel = [](const FloatArray& a) {
      Tensor t = from_numpy(a);
      Shape s = t.shape();
      s.insert(s.begin() + 1, 1);
      return t.reshape(s);
    };
    if (structure) batch.structure = with_channel(*structure);
    if (flow) batch.flow = with_channel(*flow);
    if (lso) batch.lso = with_channel(*lso);
    return loaded_.model->predict(batch);
  }

 private:
  LoadedModel loaded_;
};

}  // namespace

PYBIND11_MODULE(_mmfusion, m) {
  m.doc() = "Multimodal fusion toolkit core";

  auto error = py::register_exception<Error>(m, "Error");
  py::register_exception<ConfigError>(m, "ConfigError", error.ptr());
  py::register_exception<FormatError>(m, "FormatError", error.ptr());
  py::register_exception<UndefinedMetric>(m, "UndefinedMetric", error.ptr());
  py::register_exception<RunFailure>(m, "RunFailure", error.ptr());

  m.def("load_tensor", [](const std::filesystem::path& p) { return to_numpy(load_tensor(p)); }, py::arg("path"));
  m.def("save_tensor", [](const std::filesystem::path& p, const FloatArray& a) { save_tensor(p, from_numpy(a)); },
        py::arg("path"), py::arg("array"));

  m.def("auc", [](const std::vector<double>& s, const std::vector<int>& y) { return auc(scored(s, y)); },
        py::arg("scores"), py::arg("labels"));
  m.def(
      "roc_curve",
      [](const std::vector<double>& s, const std::vector<int>& y) {
        std::vector<std::tuple<double, double, double>> out;
        for (const auto& p : roc_curve(scored(s, y))) out.emplace_back(p.fpr, p.tpr, p.threshold);
        return out;
      },
      py::arg("scores"), py::arg("labels"), "List of (fpr, tpr, threshold), starting at (0, 0, inf).");
  m.def("operating_point", [](const std::vector<double>& s, const std::vector<int>& y) {
        return operating_point(scored(s, y));
      },
        py::arg("scores"), py::arg("labels"));
  m.def(
      "sens_spec",
      [](const std::vector<double>& s, const std::vector<int>& y, double threshold) {
        const SensSpec r = sens_spec(scored(s, y), threshold);
        return std::make_pair(r.sensitivity, r.specificity);
      },
      py::arg("scores"), py::arg("labels"), py::arg("threshold"));

  m.def(
      "synth_cohort",
      [](std::size_t n_patients, std::size_t total_acquisitions, std::array<std::size_t, 3> volume_grid,
         std::array<std::size_t, 2> lso_grid, double positive_rate, const std::string& mode, std::uint64_t seed) {
        SynthConfig c;
        c.n_patients = n_patients;
        c.total_acquisitions = total_acquisitions;
        c.volume_grid = volume_grid;
        c.lso_grid = lso_grid;
        c.positive_rate = positive_rate;
        c.mode = parse_complementarity(mode);
        c.seed = seed;
        py::list out;
        for (const auto& a : synth_generate(c)) out.append(acquisition_dict(a));
        return out;
      },
      py::arg("n_patients") = 64, py::arg("total_acquisitions") = 151,
      py::arg("volume_grid") = std::array<std::size_t, 3>{16, 64, 64},
      py::arg("lso_grid") = std::array<std::size_t, 2>{64, 64}, py::arg("positive_rate") = 0.2,
      py::arg("mode") = "complementary", py::arg("seed") = 0);

  py::class_<Model>(m, "Model")
      .def(py::init<const std::filesystem::path&>(), py::arg("path"))
      .def_property_readonly("method", &Model::method)
      .def_property_readonly("backbone", &Model::backbone)
      .def_property_readonly("parameter_count", &Model::parameter_count)
      .def_property_readonly("meta", &Model::meta)
      .def("predict", &Model::predict, py::arg("structure") = py::none(), py::arg("flow") = py::none(),
           py::arg("lso") = py::none());

  py::class_<ExperimentConfig>(m, "Experiment")
      .def(py::init(&load_experiment_config), py::arg("config_path"))
      .def_property_readonly("output_dir", [](const ExperimentConfig& c) { return c.output_dir; })
      .def_property_readonly("runs",
                             [](const ExperimentConfig& c) {
                               std::vector<std::string> names;
                               for (const auto& r : c.runs) names.push_back(r.name);
                               return names;
                             })
      .def("synth", &cmd_synth, py::arg("force") = false)
      .def(
          "run",
          [](const ExperimentConfig& c, const std::vector<std::string>& only) {
            py::dict out;
            std::vector<RunOutcome> outcomes;
            {
              py::gil_scoped_release release;
              outcomes = cmd_run(c, 1, only);
            }
            for (const auto& o : outcomes) {
              py::dict d;
              d["failed"] = o.failed;
              d["error"] = o.error;
              d["epochs"] = o.history.records.size();
              d["best_epoch"] = o.history.best_epoch;
              d["best_val_auc"] = o.history.best_epoch ? py::cast(o.history.best_val_auc()) : py::none();
              out[py::str(o.name)] = d;
            }
            return out;
          },
          py::arg("only") = std::vector<std::string>{})
      .def("compare", [](const ExperimentConfig& c) {
        py::list rows;
        for (const auto& r : cmd_compare(c).rows) {
          py::dict d;
          d["method"] = r.method;
          d["backbone"] = r.backbone;
          d["auc"] = r.auc;
          d["sensitivity"] = r.sensitivity;
          d["specificity"] = r.specificity;
          d["improvement"] = r.improvement;
          d["baseline"] = r.baseline;
          rows.append(d);
        }
        return rows;
      });
}
