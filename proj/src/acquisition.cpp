#include "mmf/acquisition.hpp"

#include <algorithm>
#include <numeric>

#include "mmf/error.hpp"

namespace mmf {

std::string_view modality_name(Modality m) {
  switch (m) {
    case Modality::Structure:
      return "structure";
    case Modality::Flow:
      return "flow";
    case Modality::LSO:
      return "lso";
  }
  return "?";
}

Modality parse_modality(std::string_view name) {
  for (Modality m : kModalities) {
    if (modality_name(m) == name) return m;
  }
  throw ConfigError("unknown modality '" + std::string(name) + "' (expected structure, flow or lso)");
}

const Tensor& Acquisition::modality(Modality m) const {
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

std::size_t ModalityBatch::size() const {
  for (Modality m : kModalities) {
    if (has(m)) return get(m).extent(0);
  }
  return 0;
}

bool ModalityBatch::has(Modality m) const {
  switch (m) {
    case Modality::Structure:
      return structure.has_value();
    case Modality::Flow:
      return flow.has_value();
    case Modality::LSO:
      return lso.has_value();
  }
  return false;
}

const Tensor& ModalityBatch::get(Modality m) const {
  if (!has(m)) throw IncompleteSample("sample is missing the " + std::string(modality_name(m)) + " modality");
  switch (m) {
    case Modality::Structure:
      return *structure;
    case Modality::Flow:
      return *flow;
    case Modality::LSO:
      return *lso;
  }
  throw Error("bad modality");
}

std::optional<Tensor>& ModalityBatch::slot(Modality m) {
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

ModalityBatch make_batch(std::span<const Acquisition> acquisitions, std::span<const std::size_t> indices) {
  if (indices.empty()) throw Error("make_batch: empty batch");
  ModalityBatch batch;
  for (Modality m : kModalities) {
    const Shape& item = acquisitions[indices[0]].modality(m).shape();
    Shape shape{indices.size(), 1};
    shape.insert(shape.end(), item.begin(), item.end());
    Tensor stacked(shape);
    float* dst = stacked.raw_mut();
    const std::size_t per = numel(item);
    for (std::size_t k = 0; k < indices.size(); ++k) {
      const Tensor& t = acquisitions[indices[k]].modality(m);
      if (t.shape() != item) {
        throw AlignmentError("acquisition " + acquisitions[indices[k]].id + " has " + std::string(modality_name(m)) +
                             " grid " + to_string(t.shape()) + ", batch expects " + to_string(item));
      }
      std::copy_n(t.raw(), per, dst + k * per);
    }
    batch.slot(m) = std::move(stacked);
  }
  return batch;
}

ModalityBatch make_batch(std::span<const Acquisition> acquisitions) {
  std::vector<std::size_t> idx(acquisitions.size());
  std::iota(idx.begin(), idx.end(), 0);
  return make_batch(acquisitions, idx);
}

std::vector<float> labels_of(std::span<const Acquisition> acquisitions, std::span<const std::size_t> indices) {
  std::vector<float> y;
  y.reserve(indices.size());
  for (std::size_t i : indices) y.push_back(static_cast<float>(acquisitions[i].label()));
  return y;
}

}  // namespace mmf
