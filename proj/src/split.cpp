#include "mmf/split.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <unordered_map>
#include <utility>

#include "json.hpp"
#include "mmf/error.hpp"
#include "mmf/rng.hpp"

namespace mmf {

namespace {

constexpr int kMaxSplitAttempts = 1000;

struct ClassCount {
  std::size_t pos = 0;
  std::size_t neg = 0;
};

}  // namespace

std::string_view split_part_name(SplitPart p) {
  switch (p) {
    case SplitPart::Train:
      return "train";
    case SplitPart::Val:
      return "val";
    case SplitPart::Test:
      return "test";
  }
  return "?";
}

SplitPart parse_split_part(std::string_view name) {
  for (SplitPart p : kSplitParts) {
    if (split_part_name(p) == name) return p;
  }
  throw FormatError("unknown split part '" + std::string(name) + "'");
}

std::vector<SampleInfo> sample_infos(std::span<const Acquisition> acquisitions) {
  std::vector<SampleInfo> out;
  out.reserve(acquisitions.size());
  for (const auto& a : acquisitions) out.push_back({a.id, a.patient_id, a.label()});
  return out;
}

const std::vector<std::string>& DatasetSplit::part(SplitPart p) const {
  switch (p) {
    case SplitPart::Train:
      return train;
    case SplitPart::Val:
      return val;
    case SplitPart::Test:
      return test;
  }
  throw Error("bad split part");
}

std::vector<std::string>& DatasetSplit::part(SplitPart p) {
  return const_cast<std::vector<std::string>&>(std::as_const(*this).part(p));
}

std::array<std::size_t, 3> patient_counts(std::size_t n_patients, const std::array<double, 3>& fractions) {
  double total = 0.0;
  for (double f : fractions) {
    if (!(f > 0.0)) throw ConfigError("split fractions must all be > 0");
    total += f;
  }
  if (std::abs(total - 1.0) > 1e-6) throw ConfigError("split fractions must sum to 1");
  if (n_patients < 3) throw InfeasibleSplit("need at least 3 patients to split, got " + std::to_string(n_patients));

  std::array<std::size_t, 3> counts{};
  std::array<double, 3> remainder{};
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    const double exact = fractions[i] * static_cast<double>(n_patients);
    counts[i] = static_cast<std::size_t>(std::floor(exact));
    remainder[i] = exact - static_cast<double>(counts[i]);
    assigned += counts[i];
  }
  while (assigned < n_patients) {
    // Largest remainder first; ties go to the earlier part.
    std::size_t best = 0;
    for (std::size_t i = 1; i < 3; ++i) {
      if (remainder[i] > remainder[best]) best = i;
    }
    ++counts[best];
    remainder[best] = -1.0;
    ++assigned;
  }
  for (std::size_t i = 0; i < 3; ++i) {
    if (counts[i] == 0) {
      const auto donor = static_cast<std::size_t>(std::max_element(counts.begin(), counts.end()) - counts.begin());
      --counts[donor];
      ++counts[i];
    }
  }
  return counts;
}

DatasetSplit split_by_patient(std::span<const SampleInfo> samples, const std::array<double, 3>& fractions,
                              std::uint64_t seed) {
  std::map<std::string, ClassCount> per_patient;
  for (const auto& s : samples) {
    auto& c = per_patient[s.patient_id];
    (s.label ? c.pos : c.neg) += 1;
  }
  std::vector<std::string> patients;
  for (const auto& [p, c] : per_patient) patients.push_back(p);
  const auto counts = patient_counts(patients.size(), fractions);

  std::array<int, 3> failures{};
  for (int attempt = 0; attempt < kMaxSplitAttempts; ++attempt) {
    std::vector<std::string> order = patients;
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(attempt)));
    rng.shuffle(order.begin(), order.end());

    std::unordered_map<std::string, std::size_t> part_of;
    std::array<ClassCount, 3> totals{};
    std::size_t next = 0;
    for (std::size_t p = 0; p < 3; ++p) {
      for (std::size_t k = 0; k < counts[p]; ++k, ++next) {
        part_of[order[next]] = p;
        totals[p].pos += per_patient[order[next]].pos;
        totals[p].neg += per_patient[order[next]].neg;
      }
    }
    bool ok = true;
    for (std::size_t p = 0; p < 3; ++p) {
      if (totals[p].pos == 0 || totals[p].neg == 0) {
        ++failures[p];
        ok = false;
      }
    }
    if (!ok) continue;

    DatasetSplit split;
    split.split_seed = seed;
    for (const auto& s : samples) split.part(kSplitParts[part_of[s.patient_id]]).push_back(s.id);
    return split;
  }
  const auto worst = static_cast<std::size_t>(std::max_element(failures.begin(), failures.end()) - failures.begin());
  throw InfeasibleSplit("cannot place at least one positive and one negative in the " +
                        std::string(split_part_name(kSplitParts[worst])) + " split after " +
                        std::to_string(kMaxSplitAttempts) + " attempts");
}

DatasetSplit split_from_assignments(std::span<const SampleInfo> samples, std::span<const std::string> assignments) {
  if (samples.size() != assignments.size()) throw Error("split assignments do not match the sample count");
  DatasetSplit split;
  for (std::size_t i = 0; i < samples.size(); ++i) split.part(parse_split_part(assignments[i])).push_back(samples[i].id);
  validate_split(samples, split);
  return split;
}

void validate_split(std::span<const SampleInfo> samples, const DatasetSplit& split) {
  std::unordered_map<std::string, const SampleInfo*> by_id;
  for (const auto& s : samples) by_id[s.id] = &s;
  std::unordered_map<std::string, SplitPart> seen_id;
  std::unordered_map<std::string, SplitPart> patient_part;
  for (SplitPart p : kSplitParts) {
    ClassCount c;
    for (const auto& id : split.part(p)) {
      auto it = by_id.find(id);
      if (it == by_id.end()) throw Error("split lists unknown acquisition '" + id + "'");
      if (!seen_id.emplace(id, p).second) throw Error("acquisition '" + id + "' appears more than once in the split");
      const auto [pp, fresh] = patient_part.emplace(it->second->patient_id, p);
      if (!fresh && pp->second != p) {
        throw Error("patient '" + it->second->patient_id + "' appears in both " +
                    std::string(split_part_name(pp->second)) + " and " + std::string(split_part_name(p)));
      }
      (it->second->label ? c.pos : c.neg) += 1;
    }
    if (c.pos == 0 || c.neg == 0) {
      throw InfeasibleSplit("the " + std::string(split_part_name(p)) + " split lacks " +
                            (c.pos == 0 ? "positives" : "negatives"));
    }
  }
  for (const auto& s : samples) {
    if (!seen_id.count(s.id)) throw Error("acquisition '" + s.id + "' is not assigned to any split");
  }
}

std::vector<std::size_t> part_indices(std::span<const SampleInfo> samples, const DatasetSplit& split, SplitPart p) {
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < samples.size(); ++i) index[samples[i].id] = i;
  std::vector<std::size_t> out;
  for (const auto& id : split.part(p)) {
    auto it = index.find(id);
    if (it == index.end()) throw Error("split lists unknown acquisition '" + id + "'");
    out.push_back(it->second);
  }
  return out;
}

void save_split(const std::filesystem::path& path, const DatasetSplit& split) {
  nlohmann::json j;
  j["version"] = 1;
  j["split_seed"] = split.split_seed;
  for (SplitPart p : kSplitParts) j[std::string(split_part_name(p))] = split.part(p);
  std::ofstream os(path);
  if (!os) throw Error("cannot write " + path.string());
  os << j.dump(2) << "\n";
}

DatasetSplit load_split(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw FormatError("cannot read " + path.string());
  try {
    const auto j = nlohmann::json::parse(is);
    if (j.at("version").get<int>() != 1) throw FormatError(path.string() + ": unsupported split version");
    DatasetSplit split;
    split.split_seed = j.at("split_seed").get<std::uint64_t>();
    for (SplitPart p : kSplitParts) split.part(p) = j.at(std::string(split_part_name(p))).get<std::vector<std::string>>();
    return split;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

}  // namespace mmf
