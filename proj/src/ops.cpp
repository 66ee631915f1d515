#include "mmf/ops.hpp"

#include <cblas.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "mmf/error.hpp"

namespace mmf {

std::size_t conv_output_extent(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t pad) {
  if (stride == 0) throw InvalidShape("stride must be >= 1");
  if (kernel == 0) throw InvalidShape("kernel extent must be >= 1");
  const auto padded = static_cast<std::int64_t>(in + 2 * pad);
  const auto k = static_cast<std::int64_t>(kernel);
  if (padded < k) {
    throw InvalidShape("non-positive output extent: in=" + std::to_string(in) + " kernel=" + std::to_string(kernel) +
                       " pad=" + std::to_string(pad));
  }
  return static_cast<std::size_t>((padded - k) / static_cast<std::int64_t>(stride)) + 1;
}

ConvSpec ConvSpec::uniform(std::size_t spatial_rank, std::size_t in_channels, std::size_t out_channels,
                           std::size_t kernel, std::size_t stride, std::size_t pad) {
  ConvSpec s;
  s.kernel.assign(spatial_rank, kernel);
  s.stride.assign(spatial_rank, stride);
  s.padding.assign(spatial_rank, pad);
  s.in_channels = in_channels;
  s.out_channels = out_channels;
  return s;
}

Shape ConvSpec::weight_shape() const {
  Shape s{out_channels, in_channels};
  s.insert(s.end(), kernel.begin(), kernel.end());
  return s;
}

std::size_t ConvSpec::kernel_volume() const {
  return std::accumulate(kernel.begin(), kernel.end(), std::size_t{1}, std::multiplies<>());
}

void ConvSpec::validate() const {
  const std::size_t r = kernel.size();
  if (r < 1 || r > 3) throw InvalidShape("conv spatial rank must be 1..3");
  if (stride.size() != r || padding.size() != r) throw InvalidShape("conv stride/padding rank mismatch");
  if (in_channels == 0 || out_channels == 0) throw InvalidShape("conv channels must be >= 1");
  for (std::size_t i = 0; i < r; ++i) {
    if (kernel[i] == 0) throw InvalidShape("conv kernel extent must be >= 1");
    if (stride[i] == 0) throw InvalidShape("conv stride must be >= 1");
  }
}

Shape ConvSpec::output_spatial(std::span<const std::size_t> in_spatial) const {
  validate();
  if (in_spatial.size() != kernel.size()) {
    throw ShapeMismatch("conv expects " + std::to_string(kernel.size()) + " spatial dims, input has " +
                        std::to_string(in_spatial.size()));
  }
  Shape out(in_spatial.size());
  for (std::size_t i = 0; i < in_spatial.size(); ++i) {
    out[i] = conv_output_extent(in_spatial[i], kernel[i], stride[i], padding[i]);
  }
  return out;
}

PoolSpec PoolSpec::uniform(std::size_t spatial_rank, std::size_t kernel, std::size_t stride) {
  return PoolSpec{std::vector<std::size_t>(spatial_rank, kernel), std::vector<std::size_t>(spatial_rank, stride)};
}

Shape PoolSpec::output_spatial(std::span<const std::size_t> in_spatial) const {
  if (kernel.size() != in_spatial.size() || stride.size() != in_spatial.size()) {
    throw ShapeMismatch("pool expects " + std::to_string(kernel.size()) + " spatial dims, input has " +
                        std::to_string(in_spatial.size()));
  }
  Shape out(in_spatial.size());
  for (std::size_t i = 0; i < in_spatial.size(); ++i) {
    out[i] = conv_output_extent(in_spatial[i], kernel[i], stride[i], 0);
  }
  return out;
}

namespace {

// Spatial dims padded on the left to (d, h, w).
struct Dims3 {
  std::size_t d = 1, h = 1, w = 1;
  std::size_t volume() const { return d * h * w; }
};

Dims3 dims3(std::span<const std::size_t> spatial) {
  Dims3 r;
  const std::size_t n = spatial.size();
  if (n >= 1) r.w = spatial[n - 1];
  if (n >= 2) r.h = spatial[n - 2];
  if (n >= 3) r.d = spatial[n - 3];
  return r;
}

Dims3 dims3(const std::vector<std::size_t>& v, std::size_t fill) {
  Dims3 r{fill, fill, fill};
  const std::size_t n = v.size();
  if (n >= 1) r.w = v[n - 1];
  if (n >= 2) r.h = v[n - 2];
  if (n >= 3) r.d = v[n - 3];
  return r;
}

void require_same_shape(const char* op, const Var& a, const Var& b) {
  if (a.shape() != b.shape()) {
    throw ShapeMismatch(std::string(op) + ": shapes " + to_string(a.shape()) + " and " + to_string(b.shape()));
  }
}

void require_rank_at_least(const char* op, const Var& x, std::size_t rank) {
  if (x.value.rank() < rank) {
    throw ShapeMismatch(std::string(op) + ": expected rank >= " + std::to_string(rank) + ", got " +
                        to_string(x.shape()));
  }
}

std::size_t spatial_volume(const Shape& s) {
  std::size_t p = 1;
  for (std::size_t i = 2; i < s.size(); ++i) p *= s[i];
  return p;
}

void accumulate(Tensor* dst, std::span<const float> src) {
  if (!dst) return;
  float* d = dst->raw_mut();
  for (std::size_t i = 0; i < src.size(); ++i) d[i] += src[i];
}

// Unfolds one sample [C, D, H, W] into columns [C*kd*kh*kw, Do*Ho*Wo].
void im2col(const float* x, std::size_t channels, const Dims3& in, const Dims3& k, const Dims3& s, const Dims3& p,
            const Dims3& out, float* col) {
  const std::size_t plane = out.volume();
  std::size_t row = 0;
  for (std::size_t c = 0; c < channels; ++c) {
    const float* xc = x + c * in.volume();
    for (std::size_t kz = 0; kz < k.d; ++kz) {
      for (std::size_t ky = 0; ky < k.h; ++ky) {
        for (std::size_t kx = 0; kx < k.w; ++kx, ++row) {
          float* dst = col + row * plane;
          for (std::size_t oz = 0; oz < out.d; ++oz) {
            const auto iz = static_cast<std::int64_t>(oz * s.d + kz) - static_cast<std::int64_t>(p.d);
            for (std::size_t oy = 0; oy < out.h; ++oy) {
              const auto iy = static_cast<std::int64_t>(oy * s.h + ky) - static_cast<std::int64_t>(p.h);
              float* drow = dst + (oz * out.h + oy) * out.w;
              if (iz < 0 || iz >= static_cast<std::int64_t>(in.d) || iy < 0 ||
                  iy >= static_cast<std::int64_t>(in.h)) {
                std::fill(drow, drow + out.w, 0.0f);
                continue;
              }
              const float* srow = xc + (static_cast<std::size_t>(iz) * in.h + static_cast<std::size_t>(iy)) * in.w;
              for (std::size_t ox = 0; ox < out.w; ++ox) {
                const auto ix = static_cast<std::int64_t>(ox * s.w + kx) - static_cast<std::int64_t>(p.w);
                drow[ox] = (ix < 0 || ix >= static_cast<std::int64_t>(in.w)) ? 0.0f : srow[ix];
              }
            }
          }
        }
      }
    }
  }
}

void col2im_add(const float* col, std::size_t channels, const Dims3& in, const Dims3& k, const Dims3& s,
                const Dims3& p, const Dims3& out, float* dx) {
  const std::size_t plane = out.volume();
  std::size_t row = 0;
  for (std::size_t c = 0; c < channels; ++c) {
    float* xc = dx + c * in.volume();
    for (std::size_t kz = 0; kz < k.d; ++kz) {
      for (std::size_t ky = 0; ky < k.h; ++ky) {
        for (std::size_t kx = 0; kx < k.w; ++kx, ++row) {
          const float* src = col + row * plane;
          for (std::size_t oz = 0; oz < out.d; ++oz) {
            const auto iz = static_cast<std::int64_t>(oz * s.d + kz) - static_cast<std::int64_t>(p.d);
            if (iz < 0 || iz >= static_cast<std::int64_t>(in.d)) continue;
            for (std::size_t oy = 0; oy < out.h; ++oy) {
              const auto iy = static_cast<std::int64_t>(oy * s.h + ky) - static_cast<std::int64_t>(p.h);
              if (iy < 0 || iy >= static_cast<std::int64_t>(in.h)) continue;
              const float* srow = src + (oz * out.h + oy) * out.w;
              float* drow = xc + (static_cast<std::size_t>(iz) * in.h + static_cast<std::size_t>(iy)) * in.w;
              for (std::size_t ox = 0; ox < out.w; ++ox) {
                const auto ix = static_cast<std::int64_t>(ox * s.w + kx) - static_cast<std::int64_t>(p.w);
                if (ix >= 0 && ix < static_cast<std::int64_t>(in.w)) drow[ix] += srow[ox];
              }
            }
          }
        }
      }
    }
  }
}

}  // namespace

namespace ops {

Var add(Tape& tape, const Var& a, const Var& b) {
  require_same_shape("add", a, b);
  Tensor out(a.shape());
  const float* pa = a.value.raw();
  const float* pb = b.value.raw();
  float* po = out.raw_mut();
  for (std::size_t i = 0; i < out.numel(); ++i) po[i] = pa[i] + pb[i];
  return tape.record("add", std::move(out), {&a, &b}, [](const Tensor& g, std::span<Tensor* const> gin) {
    accumulate(gin[0], g.data());
    accumulate(gin[1], g.data());
  });
}

Var mul(Tape& tape, const Var& a, const Var& b) {
  require_same_shape("mul", a, b);
  Tensor out(a.shape());
  const float* pa = a.value.raw();
  const float* pb = b.value.raw();
  float* po = out.raw_mut();
  for (std::size_t i = 0; i < out.numel(); ++i) po[i] = pa[i] * pb[i];
  return tape.record("mul", std::move(out), {&a, &b},
                     [av = a.value, bv = b.value](const Tensor& g, std::span<Tensor* const> gin) {
                       const float* pg = g.raw();
                       if (gin[0]) {
                         float* d = gin[0]->raw_mut();
                         for (std::size_t i = 0; i < g.numel(); ++i) d[i] += pg[i] * bv[i];
                       }
                       if (gin[1]) {
                         float* d = gin[1]->raw_mut();
                         for (std::size_t i = 0; i < g.numel(); ++i) d[i] += pg[i] * av[i];
                       }
                     });
}

Var scale(Tape& tape, const Var& a, float factor) {
  Tensor out(a.shape());
  const float* pa = a.value.raw();
  float* po = out.raw_mut();
  for (std::size_t i = 0; i < out.numel(); ++i) po[i] = pa[i] * factor;
  return tape.record("scale", std::move(out), {&a}, [factor](const Tensor& g, std::span<Tensor* const> gin) {
    float* d = gin[0]->raw_mut();
    for (std::size_t i = 0; i < g.numel(); ++i) d[i] += g[i] * factor;
  });
}

Var average(Tape& tape, std::span<const Var> parts) {
  if (parts.empty()) throw ShapeMismatch("average of zero tensors");
  for (const Var& p : parts) require_same_shape("average", parts[0], p);
  const std::size_t n = parts[0].value.numel();
  const auto k = static_cast<double>(parts.size());
  Tensor out(parts[0].shape());
  float* po = out.raw_mut();
  for (std::size_t i = 0; i < n; ++i) {
    double acc = 0.0;
    for (const Var& p : parts) acc += p.value[i];
    po[i] = static_cast<float>(acc / k);
  }
  std::vector<const Var*> inputs;
  for (const Var& p : parts) inputs.push_back(&p);
  return tape.record("average", std::move(out), inputs, [k](const Tensor& g, std::span<Tensor* const> gin) {
    for (Tensor* d : gin) {
      if (!d) continue;
      float* pd = d->raw_mut();
      for (std::size_t i = 0; i < g.numel(); ++i) pd[i] += static_cast<float>(g[i] / k);
    }
  });
}

Var sum(Tape& tape, const Var& a) {
  double acc = 0.0;
  for (float v : a.value.data()) acc += v;
  return tape.record("sum", Tensor::scalar(static_cast<float>(acc)), {&a},
                     [](const Tensor& g, std::span<Tensor* const> gin) {
                       const float gv = g[0];
                       for (float& d : gin[0]->mutable_data()) d += gv;
                     });
}

Var mean(Tape& tape, const Var& a) {
  double acc = 0.0;
  for (float v : a.value.data()) acc += v;
  const auto n = static_cast<double>(a.value.numel());
  return tape.record("mean", Tensor::scalar(static_cast<float>(acc / n)), {&a},
                     [n](const Tensor& g, std::span<Tensor* const> gin) {
                       const auto gv = static_cast<float>(g[0] / n);
                       for (float& d : gin[0]->mutable_data()) d += gv;
                     });
}

Var reshape(Tape& tape, const Var& a, Shape shape) {
  Tensor out = a.value.clone().reshape(std::move(shape));
  return tape.record("reshape", std::move(out), {&a}, [](const Tensor& g, std::span<Tensor* const> gin) {
    accumulate(gin[0], g.data());
  });
}

Var matmul(Tape& tape, const Var& a, const Var& b) {
  if (a.value.rank() != 2 || b.value.rank() != 2 || a.shape()[1] != b.shape()[0]) {
    throw ShapeMismatch("matmul: " + to_string(a.shape()) + " x " + to_string(b.shape()));
  }
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  Tensor out(Shape{m, n});
  const float* pa = a.value.raw();
  const float* pb = b.value.raw();
  float* po = out.raw_mut();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t t = 0; t < k; ++t) acc += static_cast<double>(pa[i * k + t]) * pb[t * n + j];
      po[i * n + j] = static_cast<float>(acc);
    }
  }
  return tape.record("matmul", std::move(out), {&a, &b},
                     [av = a.value, bv = b.value, m, k, n](const Tensor& g, std::span<Tensor* const> gin) {
                       const float* pg = g.raw();
                       if (gin[0]) {
                         float* d = gin[0]->raw_mut();
                         for (std::size_t i = 0; i < m; ++i)
                           for (std::size_t t = 0; t < k; ++t) {
                             double acc = 0.0;
                             for (std::size_t j = 0; j < n; ++j) acc += static_cast<double>(pg[i * n + j]) * bv[t * n + j];
                             d[i * k + t] += static_cast<float>(acc);
                           }
                       }
                       if (gin[1]) {
                         float* d = gin[1]->raw_mut();
                         for (std::size_t t = 0; t < k; ++t)
                           for (std::size_t j = 0; j < n; ++j) {
                             double acc = 0.0;
                             for (std::size_t i = 0; i < m; ++i) acc += static_cast<double>(av[i * k + t]) * pg[i * n + j];
                             d[t * n + j] += static_cast<float>(acc);
                           }
                       }
                     });
}

Var relu(Tape& tape, const Var& a) {
  const float* pa = a.value.raw();
  std::vector<std::uint8_t> mask(a.value.numel());
  for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = pa[i] > 0.0f;
  if (ActivationPattern* pattern = tape.pattern()) mask = pattern->relu_mask(std::move(mask));
  Tensor out(a.shape());
  float* po = out.raw_mut();
  for (std::size_t i = 0; i < out.numel(); ++i) po[i] = mask[i] ? pa[i] : 0.0f;
  return tape.record("relu", std::move(out), {&a}, [mask = std::move(mask)](const Tensor& g, std::span<Tensor* const> gin) {
    float* d = gin[0]->raw_mut();
    const float* pg = g.raw();
    for (std::size_t i = 0; i < g.numel(); ++i) {
      if (mask[i]) d[i] += pg[i];
    }
  });
}

Var sigmoid(Tape& tape, const Var& a) {
  Tensor out(a.shape());
  const float* pa = a.value.raw();
  float* po = out.raw_mut();
  for (std::size_t i = 0; i < out.numel(); ++i) {
    po[i] = static_cast<float>(1.0 / (1.0 + std::exp(-static_cast<double>(pa[i]))));
  }
  Tensor saved = out;
  return tape.record("sigmoid", std::move(out), {&a}, [saved](const Tensor& g, std::span<Tensor* const> gin) {
    float* d = gin[0]->raw_mut();
    const float* pg = g.raw();
    const float* py = saved.raw();
    for (std::size_t i = 0; i < g.numel(); ++i) {
      d[i] += static_cast<float>(static_cast<double>(pg[i]) * py[i] * (1.0 - py[i]));
    }
  });
}

Var concat(Tape& tape, std::span<const Var> parts, std::size_t axis) {
  if (parts.empty()) throw ShapeMismatch("concat of zero tensors");
  const Shape& first = parts[0].shape();
  if (axis >= first.size()) throw ShapeMismatch("concat axis " + std::to_string(axis) + " out of range");
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const Var& p : parts) {
    if (p.shape().size() != first.size()) throw ShapeMismatch("concat: rank mismatch");
    for (std::size_t i = 0; i < first.size(); ++i) {
      if (i != axis && p.shape()[i] != first[i]) {
        throw ShapeMismatch("concat: extent mismatch off-axis: " + to_string(p.shape()) + " vs " + to_string(first));
      }
    }
    out_shape[axis] += p.shape()[axis];
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= first[i];
  for (std::size_t i = axis + 1; i < first.size(); ++i) inner *= first[i];
  const std::size_t out_stride = out_shape[axis] * inner;

  Tensor out(out_shape);
  float* po = out.raw_mut();
  std::vector<std::size_t> chunk(parts.size());
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    chunk[k] = parts[k].shape()[axis] * inner;
    const float* src = parts[k].value.raw();
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(src + o * chunk[k], chunk[k], po + o * out_stride + offset);
    }
    offset += chunk[k];
  }
  std::vector<const Var*> inputs;
  for (const Var& p : parts) inputs.push_back(&p);
  return tape.record("concat", std::move(out), inputs,
                     [chunk, outer, out_stride](const Tensor& g, std::span<Tensor* const> gin) {
                       const float* pg = g.raw();
                       std::size_t off = 0;
                       for (std::size_t k = 0; k < chunk.size(); ++k) {
                         if (gin[k]) {
                           float* d = gin[k]->raw_mut();
                           for (std::size_t o = 0; o < outer; ++o) {
                             const float* s = pg + o * out_stride + off;
                             float* dd = d + o * chunk[k];
                             for (std::size_t i = 0; i < chunk[k]; ++i) dd[i] += s[i];
                           }
                         }
                         off += chunk[k];
                       }
                     });
}

std::vector<Var> split(Tape& tape, const Var& a, std::size_t axis, std::span<const std::size_t> sizes) {
  const Shape& shape = a.shape();
  if (axis >= shape.size()) throw ShapeMismatch("split axis out of range");
  if (std::accumulate(sizes.begin(), sizes.end(), std::size_t{0}) != shape[axis]) {
    throw ShapeMismatch("split sizes do not sum to extent " + std::to_string(shape[axis]));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];
  const std::size_t in_stride = shape[axis] * inner;

  std::vector<Var> result;
  std::size_t offset = 0;
  for (std::size_t sz : sizes) {
    Shape part_shape = shape;
    part_shape[axis] = sz;
    Tensor out(part_shape);
    const std::size_t chunk = sz * inner;
    const float* src = a.value.raw();
    float* po = out.raw_mut();
    for (std::size_t o = 0; o < outer; ++o) std::copy_n(src + o * in_stride + offset, chunk, po + o * chunk);
    result.push_back(tape.record("split", std::move(out), {&a},
                                 [outer, in_stride, offset, chunk](const Tensor& g, std::span<Tensor* const> gin) {
                                   float* d = gin[0]->raw_mut();
                                   const float* pg = g.raw();
                                   for (std::size_t o = 0; o < outer; ++o)
                                     for (std::size_t i = 0; i < chunk; ++i) d[o * in_stride + offset + i] += pg[o * chunk + i];
                                 }));
    offset += chunk;
  }
  return result;
}

Var batchnorm(Tape& tape, const Var& x, const Var& gamma, const Var& beta, BatchNormState& state) {
  require_rank_at_least("batchnorm", x, 2);
  const std::size_t n = x.shape()[0], c = x.shape()[1], p = spatial_volume(x.shape());
  if (gamma.value.numel() != c || beta.value.numel() != c || state.running_mean.numel() != c ||
      state.running_var.numel() != c) {
    throw ShapeMismatch("batchnorm: parameter size does not match " + std::to_string(c) + " channels");
  }
  Tensor out(x.shape());
  const float* px = x.value.raw();
  float* po = out.raw_mut();
  const float* pgam = gamma.value.raw();
  const float* pbet = beta.value.raw();
  const double eps = state.eps;

  if (tape.training()) {
    const double count = static_cast<double>(n * p);
    std::vector<double> mean(c), inv_std(c);
    float* rm = state.running_mean.raw_mut();
    float* rv = state.running_var.raw_mut();
    const double mom = state.momentum;
    for (std::size_t ch = 0; ch < c; ++ch) {
      double s = 0.0;
      for (std::size_t b = 0; b < n; ++b) {
        const float* row = px + (b * c + ch) * p;
        for (std::size_t i = 0; i < p; ++i) s += row[i];
      }
      const double mu = s / count;
      double ss = 0.0;
      for (std::size_t b = 0; b < n; ++b) {
        const float* row = px + (b * c + ch) * p;
        for (std::size_t i = 0; i < p; ++i) {
          const double d = row[i] - mu;
          ss += d * d;
        }
      }
      const double var = ss / count;
      mean[ch] = mu;
      inv_std[ch] = 1.0 / std::sqrt(var + eps);
      const double a = inv_std[ch] * pgam[ch];
      const double shift = pbet[ch] - mu * a;
      for (std::size_t b = 0; b < n; ++b) {
        const float* row = px + (b * c + ch) * p;
        float* orow = po + (b * c + ch) * p;
        for (std::size_t i = 0; i < p; ++i) orow[i] = static_cast<float>(row[i] * a + shift);
      }
      const double unbiased = count > 1.0 ? ss / (count - 1.0) : var;
      rm[ch] = static_cast<float>((1.0 - mom) * rm[ch] + mom * mu);
      rv[ch] = static_cast<float>((1.0 - mom) * rv[ch] + mom * unbiased);
    }
    return tape.record(
        "batchnorm", std::move(out), {&x, &gamma, &beta},
        [xv = x.value, gv = gamma.value, mean, inv_std, n, c, p](const Tensor& g, std::span<Tensor* const> gin) {
          const float* pg = g.raw();
          const float* pxx = xv.raw();
          const double count = static_cast<double>(n * p);
          for (std::size_t ch = 0; ch < c; ++ch) {
            double sum_g = 0.0, sum_gx = 0.0;
            for (std::size_t b = 0; b < n; ++b) {
              const float* grow = pg + (b * c + ch) * p;
              const float* xrow = pxx + (b * c + ch) * p;
              for (std::size_t i = 0; i < p; ++i) {
                sum_g += grow[i];
                sum_gx += grow[i] * ((xrow[i] - mean[ch]) * inv_std[ch]);
              }
            }
            if (gin[1]) gin[1]->raw_mut()[ch] += static_cast<float>(sum_gx);
            if (gin[2]) gin[2]->raw_mut()[ch] += static_cast<float>(sum_g);
            if (gin[0]) {
              float* d = gin[0]->raw_mut();
              const double k = gv[ch] * inv_std[ch];
              const double mg = sum_g / count, mgx = sum_gx / count;
              for (std::size_t b = 0; b < n; ++b) {
                const float* grow = pg + (b * c + ch) * p;
                const float* xrow = pxx + (b * c + ch) * p;
                float* drow = d + (b * c + ch) * p;
                for (std::size_t i = 0; i < p; ++i) {
                  const double xhat = (xrow[i] - mean[ch]) * inv_std[ch];
                  drow[i] += static_cast<float>(k * (grow[i] - mg - xhat * mgx));
                }
              }
            }
          }
        });
  }

  std::vector<double> inv_std(c), mean(c);
  const float* rm = state.running_mean.raw();
  const float* rv = state.running_var.raw();
  for (std::size_t ch = 0; ch < c; ++ch) {
    mean[ch] = rm[ch];
    inv_std[ch] = 1.0 / std::sqrt(static_cast<double>(rv[ch]) + eps);
    const double a = inv_std[ch] * pgam[ch];
    const double shift = pbet[ch] - mean[ch] * a;
    for (std::size_t b = 0; b < n; ++b) {
      const float* row = px + (b * c + ch) * p;
      float* orow = po + (b * c + ch) * p;
      for (std::size_t i = 0; i < p; ++i) orow[i] = static_cast<float>(row[i] * a + shift);
    }
  }
  return tape.record(
      "batchnorm", std::move(out), {&x, &gamma, &beta},
      [xv = x.value, gv = gamma.value, mean, inv_std, n, c, p](const Tensor& g, std::span<Tensor* const> gin) {
        const float* pg = g.raw();
        const float* pxx = xv.raw();
        for (std::size_t ch = 0; ch < c; ++ch) {
          double sum_g = 0.0, sum_gx = 0.0;
          const double a = gv[ch] * inv_std[ch];
          for (std::size_t b = 0; b < n; ++b) {
            const float* grow = pg + (b * c + ch) * p;
            const float* xrow = pxx + (b * c + ch) * p;
            float* drow = gin[0] ? gin[0]->raw_mut() + (b * c + ch) * p : nullptr;
            for (std::size_t i = 0; i < p; ++i) {
              sum_g += grow[i];
              sum_gx += grow[i] * ((xrow[i] - mean[ch]) * inv_std[ch]);
              if (drow) drow[i] += static_cast<float>(grow[i] * a);
            }
          }
          if (gin[1]) gin[1]->raw_mut()[ch] += static_cast<float>(sum_gx);
          if (gin[2]) gin[2]->raw_mut()[ch] += static_cast<float>(sum_g);
        }
      });
}

namespace {

struct PoolGeometry {
  std::size_t planes;  // N * C
  Dims3 in, out, k, s;
};

PoolGeometry pool_geometry(const char* op, const Var& x, const PoolSpec& spec, Shape& out_shape) {
  require_rank_at_least(op, x, 3);
  const Shape& shape = x.shape();
  std::span<const std::size_t> spatial(shape.data() + 2, shape.size() - 2);
  if (spatial.size() > 3) throw ShapeMismatch(std::string(op) + ": at most 3 spatial dims");
  Shape out_spatial = spec.output_spatial(spatial);
  out_shape = Shape{shape[0], shape[1]};
  out_shape.insert(out_shape.end(), out_spatial.begin(), out_spatial.end());
  return PoolGeometry{shape[0] * shape[1], dims3(spatial), dims3(out_spatial), dims3(spec.kernel, 1),
                      dims3(spec.stride, 1)};
}

}  // namespace

Var maxpool(Tape& tape, const Var& x, const PoolSpec& spec) {
  Shape out_shape;
  const PoolGeometry g = pool_geometry("maxpool", x, spec, out_shape);
  Tensor out(out_shape);
  std::vector<std::uint32_t> argmax(out.numel());
  const float* px = x.value.raw();
  float* po = out.raw_mut();
  const std::size_t in_vol = g.in.volume(), out_vol = g.out.volume();
  for (std::size_t pl = 0; pl < g.planes; ++pl) {
    const float* src = px + pl * in_vol;
    for (std::size_t oz = 0; oz < g.out.d; ++oz)
      for (std::size_t oy = 0; oy < g.out.h; ++oy)
        for (std::size_t ox = 0; ox < g.out.w; ++ox) {
          float best = -std::numeric_limits<float>::infinity();
          std::size_t best_i = 0;
          for (std::size_t kz = 0; kz < g.k.d; ++kz)
            for (std::size_t ky = 0; ky < g.k.h; ++ky)
              for (std::size_t kx = 0; kx < g.k.w; ++kx) {
                const std::size_t i =
                    ((oz * g.s.d + kz) * g.in.h + (oy * g.s.h + ky)) * g.in.w + (ox * g.s.w + kx);
                if (src[i] > best) {
                  best = src[i];
                  best_i = i;
                }
              }
          const std::size_t o = pl * out_vol + (oz * g.out.h + oy) * g.out.w + ox;
          po[o] = best;
          argmax[o] = static_cast<std::uint32_t>(best_i);
        }
  }
  if (ActivationPattern* pattern = tape.pattern()) {
    argmax = pattern->pool_choice(std::move(argmax));
    for (std::size_t o = 0; o < out.numel(); ++o) po[o] = px[(o / out_vol) * in_vol + argmax[o]];
  }
  return tape.record("maxpool", std::move(out), {&x},
                     [argmax = std::move(argmax), in_vol, out_vol](const Tensor& gr, std::span<Tensor* const> gin) {
                       float* d = gin[0]->raw_mut();
                       const float* pg = gr.raw();
                       for (std::size_t o = 0; o < gr.numel(); ++o) d[(o / out_vol) * in_vol + argmax[o]] += pg[o];
                     });
}

Var avgpool(Tape& tape, const Var& x, const PoolSpec& spec) {
  Shape out_shape;
  const PoolGeometry g = pool_geometry("avgpool", x, spec, out_shape);
  Tensor out(out_shape);
  const float* px = x.value.raw();
  float* po = out.raw_mut();
  const std::size_t in_vol = g.in.volume(), out_vol = g.out.volume();
  const double inv = 1.0 / static_cast<double>(g.k.volume());
  for (std::size_t pl = 0; pl < g.planes; ++pl) {
    const float* src = px + pl * in_vol;
    for (std::size_t oz = 0; oz < g.out.d; ++oz)
      for (std::size_t oy = 0; oy < g.out.h; ++oy)
        for (std::size_t ox = 0; ox < g.out.w; ++ox) {
          double acc = 0.0;
          for (std::size_t kz = 0; kz < g.k.d; ++kz)
            for (std::size_t ky = 0; ky < g.k.h; ++ky)
              for (std::size_t kx = 0; kx < g.k.w; ++kx)
                acc += src[((oz * g.s.d + kz) * g.in.h + (oy * g.s.h + ky)) * g.in.w + (ox * g.s.w + kx)];
          po[pl * out_vol + (oz * g.out.h + oy) * g.out.w + ox] = static_cast<float>(acc * inv);
        }
  }
  return tape.record("avgpool", std::move(out), {&x}, [g, inv](const Tensor& gr, std::span<Tensor* const> gin) {
    float* d = gin[0]->raw_mut();
    const float* pg = gr.raw();
    const std::size_t in_vol = g.in.volume(), out_vol = g.out.volume();
    for (std::size_t pl = 0; pl < g.planes; ++pl) {
      float* dst = d + pl * in_vol;
      for (std::size_t oz = 0; oz < g.out.d; ++oz)
        for (std::size_t oy = 0; oy < g.out.h; ++oy)
          for (std::size_t ox = 0; ox < g.out.w; ++ox) {
            const auto v = static_cast<float>(pg[pl * out_vol + (oz * g.out.h + oy) * g.out.w + ox] * inv);
            for (std::size_t kz = 0; kz < g.k.d; ++kz)
              for (std::size_t ky = 0; ky < g.k.h; ++ky)
                for (std::size_t kx = 0; kx < g.k.w; ++kx)
                  dst[((oz * g.s.d + kz) * g.in.h + (oy * g.s.h + ky)) * g.in.w + (ox * g.s.w + kx)] += v;
          }
    }
  });
}

Var global_avg_pool(Tape& tape, const Var& x) {
  require_rank_at_least("global_avg_pool", x, 3);
  const std::size_t n = x.shape()[0], c = x.shape()[1], p = spatial_volume(x.shape());
  Tensor out(Shape{n, c});
  const float* px = x.value.raw();
  float* po = out.raw_mut();
  for (std::size_t i = 0; i < n * c; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < p; ++j) acc += px[i * p + j];
    po[i] = static_cast<float>(acc / static_cast<double>(p));
  }
  return tape.record("global_avg_pool", std::move(out), {&x}, [p](const Tensor& g, std::span<Tensor* const> gin) {
    float* d = gin[0]->raw_mut();
    for (std::size_t i = 0; i < g.numel(); ++i) {
      const auto v = static_cast<float>(g[i] / static_cast<double>(p));
      for (std::size_t j = 0; j < p; ++j) d[i * p + j] += v;
    }
  });
}

Var linear(Tape& tape, const Var& x, const Var& w, const Var& b) {
  if (x.value.rank() != 2 || w.value.rank() != 2 || x.shape()[1] != w.shape()[1] || b.value.numel() != w.shape()[0]) {
    throw ShapeMismatch("linear: x " + to_string(x.shape()) + ", w " + to_string(w.shape()) + ", b " +
                        to_string(b.shape()));
  }
  const std::size_t n = x.shape()[0], f = x.shape()[1], o = w.shape()[0];
  Tensor out(Shape{n, o});
  const float* px = x.value.raw();
  const float* pw = w.value.raw();
  const float* pb = b.value.raw();
  float* po = out.raw_mut();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < o; ++j) {
      double acc = pb[j];
      for (std::size_t t = 0; t < f; ++t) acc += static_cast<double>(px[i * f + t]) * pw[j * f + t];
      po[i * o + j] = static_cast<float>(acc);
    }
  return tape.record("linear", std::move(out), {&x, &w, &b},
                     [xv = x.value, wv = w.value, n, f, o](const Tensor& g, std::span<Tensor* const> gin) {
                       const float* pg = g.raw();
                       if (gin[0]) {
                         float* d = gin[0]->raw_mut();
                         for (std::size_t i = 0; i < n; ++i)
                           for (std::size_t t = 0; t < f; ++t) {
                             double acc = 0.0;
                             for (std::size_t j = 0; j < o; ++j) acc += static_cast<double>(pg[i * o + j]) * wv[j * f + t];
                             d[i * f + t] += static_cast<float>(acc);
                           }
                       }
                       if (gin[1]) {
                         float* d = gin[1]->raw_mut();
                         for (std::size_t j = 0; j < o; ++j)
                           for (std::size_t t = 0; t < f; ++t) {
                             double acc = 0.0;
                             for (std::size_t i = 0; i < n; ++i) acc += static_cast<double>(pg[i * o + j]) * xv[i * f + t];
                             d[j * f + t] += static_cast<float>(acc);
                           }
                       }
                       if (gin[2]) {
                         float* d = gin[2]->raw_mut();
                         for (std::size_t j = 0; j < o; ++j) {
                           double acc = 0.0;
                           for (std::size_t i = 0; i < n; ++i) acc += pg[i * o + j];
                           d[j] += static_cast<float>(acc);
                         }
                       }
                     });
}

Var conv(Tape& tape, const Var& x, const Var& w, const Var* b, const ConvSpec& spec) {
  spec.validate();
  const Shape& xs = x.shape();
  if (xs.size() != spec.spatial_rank() + 2) {
    throw ShapeMismatch("conv: input " + to_string(xs) + " does not have " + std::to_string(spec.spatial_rank()) +
                        " spatial dims");
  }
  if (xs[1] != spec.in_channels) {
    throw ShapeMismatch("conv: input has " + std::to_string(xs[1]) + " channels, spec expects " +
                        std::to_string(spec.in_channels));
  }
  if (w.shape() != spec.weight_shape()) {
    throw ShapeMismatch("conv: weight shape " + to_string(w.shape()) + " != " + to_string(spec.weight_shape()));
  }
  if (b && b->value.numel() != spec.out_channels) throw ShapeMismatch("conv: bias size mismatch");

  std::span<const std::size_t> in_spatial(xs.data() + 2, xs.size() - 2);
  const Shape out_spatial = spec.output_spatial(in_spatial);
  Shape out_shape{xs[0], spec.out_channels};
  out_shape.insert(out_shape.end(), out_spatial.begin(), out_spatial.end());

  const Dims3 in = dims3(in_spatial), out = dims3(out_spatial);
  const Dims3 k = dims3(spec.kernel, 1), s = dims3(spec.stride, 1), p = dims3(spec.padding, 0);
  const std::size_t n = xs[0], cin = spec.in_channels, cout = spec.out_channels;
  const std::size_t kdim = cin * k.volume(), plane = out.volume();
  const bool pointwise = k.volume() == 1 && s.volume() == 1 && p.d == 0 && p.h == 0 && p.w == 0;

  Tensor result(out_shape);
  std::vector<float> col(pointwise ? 0 : kdim * plane);
  const float* px = x.value.raw();
  const float* pw = w.value.raw();
  float* po = result.raw_mut();
  for (std::size_t bi = 0; bi < n; ++bi) {
    const float* xin = px + bi * cin * in.volume();
    const float* cols = xin;
    if (!pointwise) {
      im2col(xin, cin, in, k, s, p, out, col.data());
      cols = col.data();
    }
    float* dst = po + bi * cout * plane;
    cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, static_cast<int>(cout), static_cast<int>(plane),
                static_cast<int>(kdim), 1.0f, pw, static_cast<int>(kdim), cols, static_cast<int>(plane), 0.0f, dst,
                static_cast<int>(plane));
    if (b) {
      const float* pb = b->value.raw();
      for (std::size_t o = 0; o < cout; ++o) {
        float* row = dst + o * plane;
        for (std::size_t i = 0; i < plane; ++i) row[i] += pb[o];
      }
    }
  }

  std::vector<const Var*> inputs{&x, &w};
  if (b) inputs.push_back(b);
  return tape.record(
      "conv", std::move(result), inputs,
      [xv = x.value, wv = w.value, in, out, k, s, p, n, cin, cout, kdim, plane, pointwise](
          const Tensor& g, std::span<Tensor* const> gin) {
        const float* pg = g.raw();
        const float* pxx = xv.raw();
        const float* pww = wv.raw();
        std::vector<float> col(pointwise ? 0 : kdim * plane);
        std::vector<float> dcol(gin[0] && !pointwise ? kdim * plane : 0);
        for (std::size_t bi = 0; bi < n; ++bi) {
          const float* gy = pg + bi * cout * plane;
          const float* xin = pxx + bi * cin * in.volume();
          if (gin[1]) {
            const float* cols = xin;
            if (!pointwise) {
              im2col(xin, cin, in, k, s, p, out, col.data());
              cols = col.data();
            }
            cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasTrans, static_cast<int>(cout), static_cast<int>(kdim),
                        static_cast<int>(plane), 1.0f, gy, static_cast<int>(plane), cols, static_cast<int>(plane),
                        1.0f, gin[1]->raw_mut(), static_cast<int>(kdim));
          }
          if (gin[0]) {
            float* dx = gin[0]->raw_mut() + bi * cin * in.volume();
            if (pointwise) {
              cblas_sgemm(CblasRowMajor, CblasTrans, CblasNoTrans, static_cast<int>(kdim), static_cast<int>(plane),
                          static_cast<int>(cout), 1.0f, pww, static_cast<int>(kdim), gy, static_cast<int>(plane),
                          1.0f, dx, static_cast<int>(plane));
            } else {
              cblas_sgemm(CblasRowMajor, CblasTrans, CblasNoTrans, static_cast<int>(kdim), static_cast<int>(plane),
                          static_cast<int>(cout), 1.0f, pww, static_cast<int>(kdim), gy, static_cast<int>(plane),
                          0.0f, dcol.data(), static_cast<int>(plane));
              col2im_add(dcol.data(), cin, in, k, s, p, out, dx);
            }
          }
          if (gin.size() > 2 && gin[2]) {
            float* db = gin[2]->raw_mut();
            for (std::size_t o = 0; o < cout; ++o) {
              double acc = 0.0;
              for (std::size_t i = 0; i < plane; ++i) acc += gy[o * plane + i];
              db[o] += static_cast<float>(acc);
            }
          }
        }
      });
}

Var bce_loss(Tape& tape, const Var& prob, std::span<const float> labels, float pos_weight) {
  const std::size_t n = prob.value.numel();
  if (labels.size() != n) {
    throw ShapeMismatch("bce_loss: " + std::to_string(n) + " probabilities vs " + std::to_string(labels.size()) +
                        " labels");
  }
  std::vector<double> weight(n), y(n), pc(n);
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    y[i] = labels[i];
    weight[i] = labels[i] > 0.5f ? pos_weight : 1.0;
    pc[i] = std::clamp(static_cast<double>(prob.value[i]), kBceEpsilon, 1.0 - kBceEpsilon);
    acc += -weight[i] * (y[i] * std::log(pc[i]) + (1.0 - y[i]) * std::log(1.0 - pc[i]));
  }
  const auto count = static_cast<double>(n);
  return tape.record("bce_loss", Tensor::scalar(static_cast<float>(acc / count)), {&prob},
                     [weight, y, pc, count](const Tensor& g, std::span<Tensor* const> gin) {
                       float* d = gin[0]->raw_mut();
                       const double gv = g[0] / count;
                       for (std::size_t i = 0; i < pc.size(); ++i) {
                         d[i] += static_cast<float>(gv * weight[i] * (-(y[i] / pc[i]) + (1.0 - y[i]) / (1.0 - pc[i])));
                       }
                     });
}

}  // namespace ops
}  // namespace mmf
