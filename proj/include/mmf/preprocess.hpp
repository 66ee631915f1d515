#pragma once

#include <array>

#include "mmf/acquisition.hpp"

namespace mmf {

struct PreprocessConfig {
  std::array<std::size_t, 3> volume_grid{16, 64, 64};  // D, H, W for structure and flow
  std::array<std::size_t, 2> lso_grid{64, 64};         // H', W'
};

// Separable linear interpolation (bilinear for rank 2, trilinear for rank 3)
// with corner-aligned sampling: output index i samples input coordinate
// i * (in - 1) / (out - 1). Same-size resampling is an exact copy.
Tensor resample_linear(const Tensor& t, const Shape& target);

// Min-max scaling to [0, 1]. A constant input maps to all zeros and sets
// `degenerate`.
Tensor minmax_normalize(const Tensor& t, bool& degenerate);

// Resample each modality to its configured grid, then normalize it per
// acquisition. Constant inputs become zeros and emit a warning.
Acquisition preprocess(const Acquisition& raw, const PreprocessConfig& config);

}  // namespace mmf
