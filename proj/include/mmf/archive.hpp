#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "mmf/tensor.hpp"

namespace mmf {

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

// Named-tensor archive. On disk:
//
//   MMFARCHIVE 1
//   meta <key> <value>            (zero or more)
//   tensor <name> <offset> <size> (one per tensor, offset into the payload)
//   end
//   <payload: concatenated FTEN records>
//
// Names and meta keys must not contain whitespace; meta values run to the end
// of the line.
struct Archive {
  std::map<std::string, std::string> meta;
  NamedTensors tensors;

  const Tensor* find(const std::string& name) const;
};

void save_archive(const std::filesystem::path& path, const Archive& archive);
Archive load_archive(const std::filesystem::path& path);

// Copies archive values into `targets` (matched by name). Throws FormatError
// naming every missing, unexpected, or shape-mismatched entry.
void restore_tensors(const NamedTensors& source, NamedTensors& targets);

}  // namespace mmf
