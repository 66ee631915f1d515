#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "mmf/backbone.hpp"
#include "mmf/gradcheck.hpp"

namespace mmf {

// Finite-difference check of every parameter of a small backbone + linear
// head trained with BCE, batch statistics on.
struct GradCase {
  nn::Family family = nn::Family::Residual;
  std::size_t spatial_rank = 2;
  std::uint64_t seed = 0;
};

struct GradCaseResult {
  GradCase which;
  std::size_t parameters = 0;
  std::size_t checked = 0;
  std::size_t rechecked = 0;  // elements that only matched at a neighbouring step
  std::vector<GradMismatch> mismatches;
  double max_abs_error = 0.0;

  bool passed() const noexcept { return mismatches.empty(); }
};

struct GradSuiteOptions {
  std::size_t seeds = 20;
  float step = 1e-3f;
  double abs_tol = 1e-4;
  double rel_tol = 1e-2;
  std::size_t batch = 2;
  std::size_t input_scale = 2;  // input extent = scale * smallest accepted extent
};

// Spec of the small network used by the suite.
nn::BackboneSpec gradcheck_spec(nn::Family family, std::size_t spatial_rank);

GradCaseResult run_grad_case(const GradCase& c, const GradSuiteOptions& options = {});

// Both families, 2-D and 3-D, `seeds` seeds each. `on_case` sees every result
// as it completes.
std::vector<GradCaseResult> run_grad_suite(const GradSuiteOptions& options = {},
                                           const std::function<void(const GradCaseResult&)>& on_case = {});

std::string describe(const GradCase& c);

}  // namespace mmf
