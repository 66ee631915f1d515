#include "mmf/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "mmf/error.hpp"

namespace mmf {

double finite_diff_element(const std::function<double()>& f, Tensor& x, std::size_t i, float h) {
  if (!(h > 0.0f)) throw Error("finite difference step must be > 0");
  float* px = x.raw_mut();
  const float original = px[i];
  const float up = original + h;
  const float down = original - h;
  px[i] = up;
  const double f_up = f();
  px[i] = down;
  const double f_down = f();
  px[i] = original;
  return (f_up - f_down) / (static_cast<double>(up) - static_cast<double>(down));
}

Tensor finite_diff_grad_inplace(const std::function<double()>& f, Tensor& x, float h) {
  Tensor grad(x.shape());
  float* pg = grad.raw_mut();
  for (std::size_t i = 0; i < x.numel(); ++i) pg[i] = static_cast<float>(finite_diff_element(f, x, i, h));
  return grad;
}

Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x, float h) {
  Tensor work = x.clone();
  return finite_diff_grad_inplace([&] { return f(work); }, work, h);
}

bool grad_close(double analytic, double numeric, double abs_tol, double rel_tol) {
  const double diff = std::abs(analytic - numeric);
  return diff <= std::max(abs_tol, rel_tol * std::max(std::abs(analytic), std::abs(numeric)));
}

std::vector<GradMismatch> compare_grads(const std::string& name, const Tensor& analytic, const Tensor& numeric,
                                        double abs_tol, double rel_tol) {
  if (analytic.shape() != numeric.shape()) throw ShapeMismatch("compare_grads: shape mismatch for " + name);
  std::vector<GradMismatch> out;
  for (std::size_t i = 0; i < analytic.numel(); ++i) {
    if (!grad_close(analytic[i], numeric[i], abs_tol, rel_tol)) out.push_back({name, i, analytic[i], numeric[i]});
  }
  return out;
}

}  // namespace mmf
