#include "mmf/preprocess.hpp"

#include <algorithm>
#include <cmath>

#include "mmf/error.hpp"
#include "mmf/log.hpp"

namespace mmf {

namespace {

// Interpolates along `axis` of a row-major array with extents `shape`.
std::vector<double> resample_axis(const std::vector<double>& src, Shape& shape, std::size_t axis, std::size_t out_n) {
  const std::size_t in_n = shape[axis];
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];

  std::vector<std::size_t> lo(out_n), hi(out_n);
  std::vector<double> frac(out_n);
  for (std::size_t i = 0; i < out_n; ++i) {
    const double pos = out_n == 1 ? 0.5 * static_cast<double>(in_n - 1)
                                  : static_cast<double>(i) * static_cast<double>(in_n - 1) / static_cast<double>(out_n - 1);
    lo[i] = std::min(static_cast<std::size_t>(std::floor(pos)), in_n - 1);
    hi[i] = std::min(lo[i] + 1, in_n - 1);
    frac[i] = pos - static_cast<double>(lo[i]);
  }
  std::vector<double> dst(outer * out_n * inner);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < out_n; ++i) {
      const double* a = &src[(o * in_n + lo[i]) * inner];
      const double* b = &src[(o * in_n + hi[i]) * inner];
      double* d = &dst[(o * out_n + i) * inner];
      const double f = frac[i];
      if (f == 0.0) {
        std::copy_n(a, inner, d);
      } else {
        for (std::size_t k = 0; k < inner; ++k) d[k] = a[k] + f * (b[k] - a[k]);
      }
    }
  }
  shape[axis] = out_n;
  return dst;
}

}  // namespace

Tensor resample_linear(const Tensor& t, const Shape& target) {
  if (target.size() != t.rank()) {
    throw ShapeMismatch("resample: target " + to_string(target) + " has different rank than " + to_string(t.shape()));
  }
  if (t.shape() == target) return t.clone();
  std::vector<double> buf(t.data().begin(), t.data().end());
  Shape shape = t.shape();
  for (std::size_t axis = 0; axis < target.size(); ++axis) {
    if (target[axis] == 0) throw InvalidShape("resample: zero target extent");
    if (shape[axis] != target[axis]) buf = resample_axis(buf, shape, axis, target[axis]);
  }
  std::vector<float> out(buf.size());
  std::transform(buf.begin(), buf.end(), out.begin(), [](double v) { return static_cast<float>(v); });
  return Tensor(target, std::move(out));
}

Tensor minmax_normalize(const Tensor& t, bool& degenerate) {
  const auto [mn_it, mx_it] = std::minmax_element(t.data().begin(), t.data().end());
  const double mn = *mn_it, mx = *mx_it;
  Tensor out(t.shape());
  degenerate = !(mx > mn);
  if (degenerate) return out;
  const double inv = 1.0 / (mx - mn);
  float* po = out.raw_mut();
  const float* pi = t.raw();
  for (std::size_t i = 0; i < t.numel(); ++i) {
    po[i] = static_cast<float>(std::clamp((pi[i] - mn) * inv, 0.0, 1.0));
  }
  return out;
}

Acquisition preprocess(const Acquisition& raw, const PreprocessConfig& config) {
  Acquisition out;
  out.id = raw.id;
  out.patient_id = raw.patient_id;
  out.icdr_grade = raw.icdr_grade;
  const Shape vol{config.volume_grid[0], config.volume_grid[1], config.volume_grid[2]};
  const Shape img{config.lso_grid[0], config.lso_grid[1]};
  for (Modality m : kModalities) {
    const Tensor& src = raw.modality(m);
    const std::size_t rank = modality_spatial_rank(m);
    if (src.rank() != rank) {
      throw ShapeMismatch("acquisition " + raw.id + ": " + std::string(modality_name(m)) + " must have rank " +
                          std::to_string(rank) + ", got " + to_string(src.shape()));
    }
    bool degenerate = false;
    Tensor norm = minmax_normalize(resample_linear(src, rank == 3 ? vol : img), degenerate);
    if (degenerate) {
      log::warn("degenerate_input", {{"acquisition", raw.id}, {"modality", modality_name(m)},
                                     {"action", "normalized to zeros"}});
    }
    switch (m) {
      case Modality::Structure:
        out.structure = std::move(norm);
        break;
      case Modality::Flow:
        out.flow = std::move(norm);
        break;
      case Modality::LSO:
        out.lso = std::move(norm);
        break;
    }
  }
  return out;
}

}  // namespace mmf
