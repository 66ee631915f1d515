#include "mmf/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "mmf/error.hpp"
#include "mmf/rng.hpp"

namespace mmf {

namespace {

constexpr double kTwoPi = 6.283185307179586;

std::string numbered(const char* prefix, std::size_t i, int width) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s-%0*zu", prefix, width, i);
  return buf;
}

struct PatientStyle {
  double layer_phase;
  double flow_phase;
  double lso_gradient;
};

void add_noise(Tensor& t, Rng& rng, double sigma) {
  if (sigma <= 0.0) return;
  for (float& v : t.mutable_data()) v += static_cast<float>(sigma * rng.normal());
}

// Uniform position keeping a margin of `r` from both borders.
double place(Rng& rng, std::size_t extent, double r) {
  const double lo = r, hi = static_cast<double>(extent) - 1.0 - r;
  return hi > lo ? rng.uniform(lo, hi) : 0.5 * static_cast<double>(extent - 1);
}

void plant_ellipsoid(Tensor& vol, Rng& rng, double strength) {
  const std::size_t d = vol.extent(0), h = vol.extent(1), w = vol.extent(2);
  const double rz = std::max(1.0, 0.2 * static_cast<double>(d));
  const double ry = 0.125 * static_cast<double>(h), rx = 0.125 * static_cast<double>(w);
  const double cz = place(rng, d, rz), cy = place(rng, h, ry), cx = place(rng, w, rx);
  float* p = vol.raw_mut();
  for (std::size_t z = 0; z < d; ++z)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        const double dz = (static_cast<double>(z) - cz) / rz, dy = (static_cast<double>(y) - cy) / ry,
                     dx = (static_cast<double>(x) - cx) / rx;
        if (dz * dz + dy * dy + dx * dx <= 1.0) p[(z * h + y) * w + x] += static_cast<float>(strength);
      }
}

void plant_tube(Tensor& vol, Rng& rng, double strength) {
  const std::size_t d = vol.extent(0), h = vol.extent(1), w = vol.extent(2);
  const double half_len = 0.25 * static_cast<double>(std::min(h, w));
  const double radius = std::max(1.0, 0.04 * static_cast<double>(std::min(h, w)));
  const double half_depth = std::max(1.0, 0.15 * static_cast<double>(d));
  const double cz = place(rng, d, half_depth);
  const double cy = place(rng, h, half_len), cx = place(rng, w, half_len);
  const double theta = rng.uniform(0.0, kTwoPi / 2.0);
  const double uy = std::sin(theta), ux = std::cos(theta);
  float* p = vol.raw_mut();
  for (std::size_t z = 0; z < d; ++z) {
    if (std::abs(static_cast<double>(z) - cz) > half_depth) continue;
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        const double py = static_cast<double>(y) - cy, px = static_cast<double>(x) - cx;
        const double t = std::clamp(py * uy + px * ux, -half_len, half_len);
        const double ey = py - t * uy, ex = px - t * ux;
        if (ey * ey + ex * ex <= radius * radius) p[(z * h + y) * w + x] += static_cast<float>(strength);
      }
  }
}

void plant_disc(Tensor& img, Rng& rng, double strength) {
  const std::size_t h = img.extent(0), w = img.extent(1);
  const double r = 0.125 * static_cast<double>(std::min(h, w));
  const double cy = place(rng, h, r), cx = place(rng, w, r);
  float* p = img.raw_mut();
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const double dy = static_cast<double>(y) - cy, dx = static_cast<double>(x) - cx;
      if (dy * dy + dx * dx <= r * r) p[y * w + x] += static_cast<float>(strength);
    }
}

Tensor structure_background(const std::array<std::size_t, 3>& g, const PatientStyle& style) {
  Tensor t(Shape{g[0], g[1], g[2]});
  float* p = t.raw_mut();
  const std::size_t plane = g[1] * g[2];
  for (std::size_t z = 0; z < g[0]; ++z) {
    const auto v = static_cast<float>(
        0.5 + 0.15 * std::sin(kTwoPi * static_cast<double>(z) / static_cast<double>(g[0]) + style.layer_phase));
    std::fill(p + z * plane, p + (z + 1) * plane, v);
  }
  return t;
}

Tensor flow_background(const std::array<std::size_t, 3>& g, const PatientStyle& style) {
  Tensor t(Shape{g[0], g[1], g[2]});
  float* p = t.raw_mut();
  for (std::size_t z = 0; z < g[0]; ++z)
    for (std::size_t y = 0; y < g[1]; ++y) {
      const auto v = static_cast<float>(
          0.15 + 0.05 * std::cos(kTwoPi * static_cast<double>(y) / static_cast<double>(g[1]) + style.flow_phase));
      std::fill(p + (z * g[1] + y) * g[2], p + (z * g[1] + y + 1) * g[2], v);
    }
  return t;
}

Tensor lso_background(const std::array<std::size_t, 2>& g, const PatientStyle& style) {
  Tensor t(Shape{g[0], g[1]});
  float* p = t.raw_mut();
  for (std::size_t y = 0; y < g[0]; ++y)
    for (std::size_t x = 0; x < g[1]; ++x) {
      p[y * g[1] + x] = static_cast<float>(
          0.4 + style.lso_gradient * (static_cast<double>(x) / static_cast<double>(g[1]) - 0.5));
    }
  return t;
}

}  // namespace

std::string_view complementarity_name(Complementarity c) {
  return c == Complementarity::Redundant ? "redundant" : "complementary";
}

Complementarity parse_complementarity(std::string_view name) {
  if (name == "redundant") return Complementarity::Redundant;
  if (name == "complementary") return Complementarity::Complementary;
  throw ConfigError("unknown complementarity mode '" + std::string(name) + "'");
}

void SynthConfig::validate() const {
  if (n_patients == 0) throw ConfigError("synth: n_patients must be >= 1");
  if (min_acquisitions_per_patient == 0 || max_acquisitions_per_patient < min_acquisitions_per_patient) {
    throw ConfigError("synth: invalid acquisitions-per-patient range");
  }
  if (total_acquisitions > 0 && (total_acquisitions < n_patients * min_acquisitions_per_patient ||
                                 total_acquisitions > n_patients * max_acquisitions_per_patient)) {
    throw ConfigError("synth: total_acquisitions " + std::to_string(total_acquisitions) +
                      " not reachable with the per-patient range");
  }
  if (!(positive_rate > 0.0 && positive_rate < 1.0)) throw ConfigError("synth: positive_rate must be in (0, 1)");
  if (s_structure < 0.0 || s_flow < 0.0 || s_lso < 0.0) throw ConfigError("synth: signal strengths must be >= 0");
  if (!(noise_sigma >= 0.0)) throw ConfigError("synth: noise_sigma must be >= 0");
  for (std::size_t i = 0; i < 3; ++i) {
    if (volume_grid[i] < kMinSynthVolume[i]) {
      throw ConfigError("synth: volume grid too small for planted blob radii (minimum 4x16x16)");
    }
  }
  for (std::size_t i = 0; i < 2; ++i) {
    if (lso_grid[i] < kMinSynthImage[i]) throw ConfigError("synth: lso grid too small for planted disc (minimum 16x16)");
  }
}

std::vector<Acquisition> synth_generate(const SynthConfig& config, std::vector<PlantedSignals>* planted) {
  config.validate();
  Rng cohort(derive_seed(config.seed, "cohort"));

  std::vector<std::size_t> counts(config.n_patients, config.min_acquisitions_per_patient);
  if (config.total_acquisitions > 0) {
    std::size_t remaining = config.total_acquisitions - config.n_patients * config.min_acquisitions_per_patient;
    while (remaining > 0) {
      const std::size_t p = cohort.below(config.n_patients);
      if (counts[p] < config.max_acquisitions_per_patient) {
        ++counts[p];
        --remaining;
      }
    }
  } else {
    for (auto& c : counts) {
      c = static_cast<std::size_t>(cohort.between(static_cast<std::int64_t>(config.min_acquisitions_per_patient),
                                                  static_cast<std::int64_t>(config.max_acquisitions_per_patient)));
    }
  }

  std::vector<Acquisition> out;
  if (planted) planted->clear();
  std::size_t index = 0;
  for (std::size_t p = 0; p < config.n_patients; ++p) {
    Rng prng(derive_seed(config.seed, "patient" + std::to_string(p)));
    const PatientStyle style{prng.uniform(0.0, kTwoPi), prng.uniform(0.0, kTwoPi), prng.uniform(-0.2, 0.2)};
    for (std::size_t k = 0; k < counts[p]; ++k, ++index) {
      Rng rng(derive_seed(config.seed, "acquisition" + std::to_string(index)));
      Acquisition a;
      a.id = numbered("acq", index + 1, 4);
      a.patient_id = numbered("pat", p + 1, 3);
      const bool positive = rng.uniform() < config.positive_rate;
      a.icdr_grade = positive ? 4 : static_cast<int>(rng.below(4));

      PlantedSignals signals{false, false, false};
      if (positive) {
        if (config.mode == Complementarity::Redundant) {
          signals = {true, true, true};
        } else {
          // Uniform over the subsets of size >= 2.
          switch (rng.below(4)) {
            case 0:
              signals = {true, true, false};
              break;
            case 1:
              signals = {true, false, true};
              break;
            case 2:
              signals = {false, true, true};
              break;
            default:
              signals = {true, true, true};
              break;
          }
        }
      }
      a.structure = structure_background(config.volume_grid, style);
      a.flow = flow_background(config.volume_grid, style);
      a.lso = lso_background(config.lso_grid, style);
      if (signals[0]) plant_ellipsoid(a.structure, rng, config.s_structure);
      if (signals[1]) plant_tube(a.flow, rng, config.s_flow);
      if (signals[2]) plant_disc(a.lso, rng, config.s_lso);
      add_noise(a.structure, rng, config.noise_sigma);
      add_noise(a.flow, rng, config.noise_sigma);
      add_noise(a.lso, rng, config.noise_sigma);
      out.push_back(std::move(a));
      if (planted) planted->push_back(signals);
    }
  }
  return out;
}

}  // namespace mmf
