#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mmf/acquisition.hpp"

namespace mmf {

enum class SplitPart { Train, Val, Test };

inline constexpr std::array<SplitPart, 3> kSplitParts{SplitPart::Train, SplitPart::Val, SplitPart::Test};

std::string_view split_part_name(SplitPart p);
SplitPart parse_split_part(std::string_view name);

// What splitting needs to know about one acquisition.
struct SampleInfo {
  std::string id;
  std::string patient_id;
  int label = 0;
};

std::vector<SampleInfo> sample_infos(std::span<const Acquisition> acquisitions);

struct DatasetSplit {
  std::vector<std::string> train;
  std::vector<std::string> val;
  std::vector<std::string> test;
  std::uint64_t split_seed = 0;

  const std::vector<std::string>& part(SplitPart p) const;
  std::vector<std::string>& part(SplitPart p);
};

// Patient ratios 31:14:19 rounded.
inline constexpr std::array<double, 3> kDefaultSplitFractions{0.48, 0.22, 0.30};

// Partitions patients (not acquisitions) by fraction using largest-remainder
// rounding; every acquisition follows its patient. Patient order is shuffled
// with a seed derived from (seed, attempt) until each part holds at least one
// positive and one negative; gives up with InfeasibleSplit after a fixed
// number of attempts, naming the part that failed most often.
DatasetSplit split_by_patient(std::span<const SampleInfo> samples, const std::array<double, 3>& fractions,
                              std::uint64_t seed);

// Patient counts per part for `n_patients` under `fractions`.
std::array<std::size_t, 3> patient_counts(std::size_t n_patients, const std::array<double, 3>& fractions);

// Builds a split from explicit per-sample part names ("train"/"val"/"test"),
// e.g. the optional split column of a manifest.
DatasetSplit split_from_assignments(std::span<const SampleInfo> samples, std::span<const std::string> assignments);

// Checks partition completeness, patient-disjointness and class presence.
// Throws InfeasibleSplit (class presence) or Error (structure) naming the
// offending part, patient or acquisition.
void validate_split(std::span<const SampleInfo> samples, const DatasetSplit& split);

// Indices into `samples` of the ids listed in one part, in listed order.
std::vector<std::size_t> part_indices(std::span<const SampleInfo> samples, const DatasetSplit& split, SplitPart p);

void save_split(const std::filesystem::path& path, const DatasetSplit& split);
DatasetSplit load_split(const std::filesystem::path& path);

}  // namespace mmf
