#include "mmf/tensor_io.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "mmf/error.hpp"

namespace mmf {

namespace {

constexpr std::array<char, 4> kMagic{'F', 'T', 'E', 'N'};

template <typename U>
void put_le(std::ostream& os, U v) {
  std::array<char, sizeof(U)> buf;
  for (std::size_t i = 0; i < sizeof(U); ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(buf.data(), buf.size());
}

template <typename U>
U get_le(std::istream& is) {
  std::array<unsigned char, sizeof(U)> buf;
  if (!is.read(reinterpret_cast<char*>(buf.data()), buf.size())) throw FormatError("truncated FTEN header");
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(buf[i]) << (8 * i);
  return v;
}

}  // namespace

std::size_t ften_size(const Tensor& t) { return 4 + 2 + 2 + 8 * t.rank() + 4 * t.numel(); }

void write_ften(std::ostream& os, const Tensor& t) {
  os.write(kMagic.data(), kMagic.size());
  put_le<std::uint16_t>(os, kFtenVersion);
  put_le<std::uint16_t>(os, static_cast<std::uint16_t>(t.rank()));
  for (std::size_t e : t.shape()) put_le<std::uint64_t>(os, e);
  if constexpr (std::endian::native == std::endian::little) {
    os.write(reinterpret_cast<const char*>(t.raw()), static_cast<std::streamsize>(t.numel() * sizeof(float)));
  } else {
    for (float v : t.data()) put_le<std::uint32_t>(os, std::bit_cast<std::uint32_t>(v));
  }
  if (!os) throw FormatError("failed writing FTEN record");
}

Tensor read_ften(std::istream& is) {
  std::array<char, 4> magic{};
  if (!is.read(magic.data(), magic.size()) || magic != kMagic) throw FormatError("bad FTEN magic");
  const auto version = get_le<std::uint16_t>(is);
  if (version != kFtenVersion) throw FormatError("unsupported FTEN version " + std::to_string(version));
  const auto rank = get_le<std::uint16_t>(is);
  Shape shape(rank);
  for (auto& e : shape) {
    const auto v = get_le<std::uint64_t>(is);
    if (v == 0 || v > (std::uint64_t{1} << 40)) throw FormatError("bad FTEN extent");
    e = static_cast<std::size_t>(v);
  }
  std::vector<float> values(numel(shape));
  if constexpr (std::endian::native == std::endian::little) {
    if (!is.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(float)))) {
      throw FormatError("truncated FTEN payload");
    }
  } else {
    for (float& v : values) v = std::bit_cast<float>(get_le<std::uint32_t>(is));
  }
  return Tensor(std::move(shape), std::move(values));
}

void save_tensor(const std::filesystem::path& path, const Tensor& t) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw FormatError("cannot open " + path.string() + " for writing");
  write_ften(os, t);
}

Tensor load_tensor(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open tensor file " + path.string());
  try {
    return read_ften(is);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

}  // namespace mmf
