#pragma once

#include <array>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mmf/tensor.hpp"

namespace mmf {

enum class Modality { Structure, Flow, LSO };

inline constexpr std::array<Modality, 3> kModalities{Modality::Structure, Modality::Flow, Modality::LSO};

std::string_view modality_name(Modality m);
Modality parse_modality(std::string_view name);
inline constexpr std::size_t modality_index(Modality m) { return static_cast<std::size_t>(m); }
// Structure and flow are volumes; LSO is an en-face image.
inline constexpr std::size_t modality_spatial_rank(Modality m) { return m == Modality::LSO ? 2 : 3; }

// One multimodal acquisition. Volumes are [D, H, W], the LSO image [H', W'].
struct Acquisition {
  std::string id;
  std::string patient_id;
  int icdr_grade = 0;
  Tensor structure;
  Tensor flow;
  Tensor lso;

  // Positive class: proliferative DR (ICDR grade 4).
  int label() const noexcept { return icdr_grade == 4 ? 1 : 0; }
  const Tensor& modality(Modality m) const;
};

// Batched network inputs: volumes [N, 1, D, H, W], LSO [N, 1, H', W'].
struct ModalityBatch {
  std::optional<Tensor> structure;
  std::optional<Tensor> flow;
  std::optional<Tensor> lso;

  std::size_t size() const;
  bool has(Modality m) const;
  // Throws IncompleteSample when the modality is absent.
  const Tensor& get(Modality m) const;
  std::optional<Tensor>& slot(Modality m);
};

// Stacks the given acquisitions (all modalities) into one batch. All
// acquisitions must share grid sizes.
ModalityBatch make_batch(std::span<const Acquisition> acquisitions, std::span<const std::size_t> indices);
ModalityBatch make_batch(std::span<const Acquisition> acquisitions);

std::vector<float> labels_of(std::span<const Acquisition> acquisitions, std::span<const std::size_t> indices);

}  // namespace mmf
