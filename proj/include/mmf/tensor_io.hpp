#pragma once

#include <filesystem>
#include <iosfwd>

#include "mmf/tensor.hpp"

namespace mmf {

// FTEN record: "FTEN", u16 version, u16 rank, rank x u64 extents, then the
// float32 values row-major. All integers and floats little-endian.
inline constexpr std::uint16_t kFtenVersion = 1;

void write_ften(std::ostream& os, const Tensor& t);
Tensor read_ften(std::istream& is);

// Size in bytes of the FTEN record for `t`.
std::size_t ften_size(const Tensor& t);

void save_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor load_tensor(const std::filesystem::path& path);

}  // namespace mmf
