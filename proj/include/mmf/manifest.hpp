#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mmf/acquisition.hpp"
#include "mmf/split.hpp"

namespace mmf {

inline constexpr int kManifestVersion = 1;

// Manifest file, one JSON object per line. The first line is the header
//   {"format":"mmfusion-manifest","version":1}
// and every following line is one acquisition
//   {"id":"acq-0001","patient_id":"pat-001","icdr_grade":4,
//    "structure":"tensors/acq-0001.structure.ften","flow":"...","lso":"...",
//    "split":"train"}
// Paths are relative to the manifest's directory; "split" is optional.
struct ManifestRecord {
  std::string id;
  std::string patient_id;
  int icdr_grade = 0;
  std::string structure;
  std::string flow;
  std::string lso;
  std::optional<std::string> split;

  int label() const noexcept { return icdr_grade == 4 ? 1 : 0; }
  const std::string& path(Modality m) const;
  std::string& path(Modality m);

  bool operator==(const ManifestRecord&) const = default;
};

struct Manifest {
  std::filesystem::path root;  // directory the record paths are relative to
  std::vector<ManifestRecord> records;

  std::vector<SampleInfo> sample_infos() const;
  // Loads the tensors of record i. A missing file is a FormatError naming it.
  Acquisition resolve(std::size_t i) const;
  std::vector<Acquisition> resolve_all() const;
  // Split from the records' "split" fields; every record must carry one.
  DatasetSplit recorded_split() const;
};

// Schema violations, unsupported versions and duplicate ids are FormatErrors.
Manifest load_manifest(const std::filesystem::path& path);
void save_manifest(const std::filesystem::path& path, const Manifest& manifest);

// Writes every acquisition's tensors under <dir>/tensors and the manifest at
// <dir>/manifest.jsonl. Returns the manifest written.
Manifest write_dataset(const std::filesystem::path& dir, std::span<const Acquisition> acquisitions);

}  // namespace mmf
