#include "mmf/manifest.hpp"

#include <fstream>
#include <set>
#include <utility>

#include "json.hpp"
#include "mmf/error.hpp"
#include "mmf/tensor_io.hpp"

namespace mmf {

namespace {

constexpr const char* kFormatTag = "mmfusion-manifest";

std::string required_string(const nlohmann::json& j, const char* key, const std::string& where) {
  auto it = j.find(key);
  if (it == j.end() || !it->is_string()) throw FormatError(where + ": missing string field '" + key + "'");
  return it->get<std::string>();
}

}  // namespace

const std::string& ManifestRecord::path(Modality m) const {
  switch (m) {
    case Modality::Structure:
      return structure;
    case Modality::Flow:
      return flow;
    case Modality::LSO:
      return lso;
  }
  throw Error("bad modality");
}

std::string& ManifestRecord::path(Modality m) {
  return const_cast<std::string&>(std::as_const(*this).path(m));
}

std::vector<SampleInfo> Manifest::sample_infos() const {
  std::vector<SampleInfo> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back({r.id, r.patient_id, r.label()});
  return out;
}

Acquisition Manifest::resolve(std::size_t i) const {
  const ManifestRecord& r = records.at(i);
  Acquisition a;
  a.id = r.id;
  a.patient_id = r.patient_id;
  a.icdr_grade = r.icdr_grade;
  for (Modality m : kModalities) {
    const auto file = root / r.path(m);
    if (!std::filesystem::exists(file)) {
      throw FormatError("acquisition '" + r.id + "' references missing file " + file.string());
    }
    Tensor t = load_tensor(file);
    const std::size_t want = modality_spatial_rank(m);
    if (t.rank() != want) {
      throw FormatError(file.string() + ": expected a rank-" + std::to_string(want) + " tensor, got " +
                        to_string(t.shape()));
    }
    switch (m) {
      case Modality::Structure:
        a.structure = std::move(t);
        break;
      case Modality::Flow:
        a.flow = std::move(t);
        break;
      case Modality::LSO:
        a.lso = std::move(t);
        break;
    }
  }
  return a;
}

std::vector<Acquisition> Manifest::resolve_all() const {
  std::vector<Acquisition> out;
  out.reserve(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) out.push_back(resolve(i));
  return out;
}

DatasetSplit Manifest::recorded_split() const {
  std::vector<std::string> assignments;
  for (const auto& r : records) {
    if (!r.split) throw FormatError("acquisition '" + r.id + "' has no recorded split");
    assignments.push_back(*r.split);
  }
  const auto infos = sample_infos();
  return split_from_assignments(infos, assignments);
}

Manifest load_manifest(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw FormatError("cannot read manifest " + path.string());
  Manifest m;
  m.root = path.parent_path();
  std::string line;
  std::size_t lineno = 0;
  bool header = false;
  std::set<std::string> ids;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path.string() + ":" + std::to_string(lineno);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(where + ": " + e.what());
    }
    if (!j.is_object()) throw FormatError(where + ": expected an object");
    if (!header) {
      if (j.value("format", "") != kFormatTag) throw FormatError(where + ": not a manifest header");
      if (!j.contains("version") || !j["version"].is_number_integer()) {
        throw FormatError(where + ": manifest header lacks an integer version");
      }
      if (j["version"].get<int>() != kManifestVersion) {
        throw FormatError(where + ": unsupported manifest version " + j["version"].dump());
      }
      header = true;
      continue;
    }
    ManifestRecord r;
    r.id = required_string(j, "id", where);
    r.patient_id = required_string(j, "patient_id", where);
    if (!j.contains("icdr_grade") || !j["icdr_grade"].is_number_integer()) {
      throw FormatError(where + ": missing integer field 'icdr_grade'");
    }
    r.icdr_grade = j["icdr_grade"].get<int>();
    if (r.icdr_grade < 0 || r.icdr_grade > 4) throw FormatError(where + ": icdr_grade out of range 0-4");
    r.structure = required_string(j, "structure", where);
    r.flow = required_string(j, "flow", where);
    r.lso = required_string(j, "lso", where);
    if (j.contains("split")) {
      r.split = required_string(j, "split", where);
      parse_split_part(*r.split);
    }
    if (!ids.insert(r.id).second) throw FormatError(where + ": duplicate acquisition id '" + r.id + "'");
    m.records.push_back(std::move(r));
  }
  if (!header) throw FormatError(path.string() + ": empty manifest");
  return m;
}

void save_manifest(const std::filesystem::path& path, const Manifest& manifest) {
  std::set<std::string> ids;
  for (const auto& r : manifest.records) {
    if (!ids.insert(r.id).second) throw FormatError("duplicate acquisition id '" + r.id + "'");
  }
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error("cannot write manifest " + path.string());
  os << nlohmann::json{{"format", kFormatTag}, {"version", kManifestVersion}}.dump() << "\n";
  for (const auto& r : manifest.records) {
    nlohmann::ordered_json j;
    j["id"] = r.id;
    j["patient_id"] = r.patient_id;
    j["icdr_grade"] = r.icdr_grade;
    j["structure"] = r.structure;
    j["flow"] = r.flow;
    j["lso"] = r.lso;
    if (r.split) j["split"] = *r.split;
    os << j.dump() << "\n";
  }
  if (!os) throw Error("failed writing manifest " + path.string());
}

Manifest write_dataset(const std::filesystem::path& dir, std::span<const Acquisition> acquisitions) {
  std::filesystem::create_directories(dir / "tensors");
  Manifest m;
  m.root = dir;
  for (const auto& a : acquisitions) {
    ManifestRecord r;
    r.id = a.id;
    r.patient_id = a.patient_id;
    r.icdr_grade = a.icdr_grade;
    for (Modality mod : kModalities) {
      const std::string rel = "tensors/" + a.id + "." + std::string(modality_name(mod)) + ".ften";
      save_tensor(dir / rel, a.modality(mod));
      r.path(mod) = rel;
    }
    m.records.push_back(std::move(r));
  }
  save_manifest(dir / "manifest.jsonl", m);
  return m;
}

}  // namespace mmf
