#pragma once

#include <functional>
#include <string>
#include <vector>

#include "mmf/tensor.hpp"

namespace mmf {

// Central differences: grad[i] = (f(x + h e_i) - f(x - h e_i)) / (x_i^+ - x_i^-),
// dividing by the step actually realised in float32.
Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x, float h);

// Same estimate for a tensor that `f` reads implicitly (a model parameter):
// `x` is perturbed in place and restored bit-exactly afterwards.
Tensor finite_diff_grad_inplace(const std::function<double()>& f, Tensor& x, float h);

// Central difference for the single element x[i], restored afterwards.
double finite_diff_element(const std::function<double()>& f, Tensor& x, std::size_t i, float h);

struct GradMismatch {
  std::string name;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

// |a - n| <= max(abs_tol, rel_tol * max(|a|, |n|)).
bool grad_close(double analytic, double numeric, double abs_tol, double rel_tol);

std::vector<GradMismatch> compare_grads(const std::string& name, const Tensor& analytic, const Tensor& numeric,
                                        double abs_tol, double rel_tol);

}  // namespace mmf
