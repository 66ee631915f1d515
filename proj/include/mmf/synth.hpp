#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "mmf/acquisition.hpp"

namespace mmf {

enum class Complementarity { Redundant, Complementary };

std::string_view complementarity_name(Complementarity c);
Complementarity parse_complementarity(std::string_view name);

// Synthetic tri-modal cohort. Positive acquisitions carry planted signals:
// a bright ellipsoid in the structure volume, a bright tube in the flow
// volume, a bright disc in the LSO image, each scaled by its strength.
// Redundant mode plants all three; complementary mode plants a random subset
// of at least two, so no single modality sees every positive.
struct SynthConfig {
  std::size_t n_patients = 64;
  std::size_t min_acquisitions_per_patient = 1;
  std::size_t max_acquisitions_per_patient = 4;
  // Exact cohort size when > 0 (spread over patients within the range);
  // otherwise each patient draws its count uniformly from the range.
  std::size_t total_acquisitions = 151;
  std::array<std::size_t, 3> volume_grid{16, 64, 64};
  std::array<std::size_t, 2> lso_grid{64, 64};
  double positive_rate = 0.2;
  double s_structure = 1.0;
  double s_flow = 1.0;
  double s_lso = 1.0;
  double noise_sigma = 0.5;
  Complementarity mode = Complementarity::Complementary;
  std::uint64_t seed = 0;

  void validate() const;
};

// Which signals were planted in one acquisition (index by modality_index).
using PlantedSignals = std::array<bool, 3>;

std::vector<Acquisition> synth_generate(const SynthConfig& config, std::vector<PlantedSignals>* planted = nullptr);

// Smallest volume/LSO extents the generator accepts.
inline constexpr std::array<std::size_t, 3> kMinSynthVolume{4, 16, 16};
inline constexpr std::array<std::size_t, 2> kMinSynthImage{16, 16};

}  // namespace mmf
