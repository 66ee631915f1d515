#include "mmf/gradsuite.hpp"

#include <cmath>

#include "mmf/ops.hpp"
#include "mmf/rng.hpp"

namespace mmf {

nn::BackboneSpec gradcheck_spec(nn::Family family, std::size_t spatial_rank) {
  nn::BackboneSpec s;
  s.preset = "gradcheck";
  s.family = family;
  s.spatial_rank = spatial_rank;
  s.stem_channels = 4;
  if (family == nn::Family::Residual) {
    s.stages = {{1, 4, 0}, {1, 8, 0}};
  } else {
    s.stages = {{2, 0, 4}, {2, 0, 4}};
  }
  s.validate();
  return s;
}

std::string describe(const GradCase& c) {
  return std::string(c.family == nn::Family::Residual ? "residual" : "dense") + " " +
         std::to_string(c.spatial_rank) + "-D seed " + std::to_string(c.seed);
}

GradCaseResult run_grad_case(const GradCase& c, const GradSuiteOptions& options) {
  const nn::BackboneSpec spec = gradcheck_spec(c.family, c.spatial_rank);
  nn::FeatureExtractor backbone(spec, 1, derive_seed(c.seed, "backbone"));
  nn::Linear head(backbone.feature_dim(), 1, derive_seed(c.seed, "head"));

  const std::size_t batch = options.batch;
  Shape input_shape{batch, 1};
  const auto min_extent = backbone.min_input_extent();
  for (std::size_t e : min_extent) input_shape.push_back(std::max<std::size_t>(options.input_scale * e, 4));
  const Tensor x = create(input_shape, Init::uniform(derive_seed(c.seed, "input"), 0.0f, 1.0f));
  std::vector<float> labels(batch);
  for (std::size_t i = 0; i < batch; ++i) labels[i] = static_cast<float>(i % 2 == 0);

  // Randomise BN affine parameters so the check does not sit at gamma=1, beta=0.
  nn::Registry reg = backbone.registry();
  head.collect("head", reg);
  Rng rng(derive_seed(c.seed, "affine"));
  for (auto& [name, t] : reg.params) {
    if (name.ends_with(".gamma")) {
      for (float& v : t.mutable_data()) v = static_cast<float>(rng.uniform(0.5, 1.5));
    } else if (name.ends_with(".beta") || name.ends_with(".bias")) {
      for (float& v : t.mutable_data()) v = static_cast<float>(rng.uniform(-0.2, 0.2));
    }
  }

  const auto loss_on = [&](Tape& tape) {
    const Var features = backbone.forward(tape, Tape::constant(x));
    const Var logits = head.forward(tape, features);
    const Var prob = ops::reshape(tape, ops::sigmoid(tape, logits), Shape{batch});
    return ops::bce_loss(tape, prob, labels);
  };

  ActivationPattern pattern;
  Tape tape(Mode::Train, true);
  tape.set_pattern(&pattern);
  const Var loss = loss_on(tape);
  const Gradients grads = backward(tape, loss);
  pattern.start_replay();
  // The probe pools, applies the head and the loss in double precision so
  // float rounding of the scalar end of the graph does not swamp the
  // difference quotient.
  const auto f = [&]() {
    Tape probe(Mode::Train, false);
    probe.set_pattern(&pattern);
    pattern.rewind();
    const Tensor map = backbone.feature_map(probe, Tape::constant(x)).value;
    const std::size_t channels = map.extent(1), volume = map.numel() / (batch * channels);
    double total = 0.0;
    for (std::size_t n = 0; n < batch; ++n) {
      double logit = head.bias()[0];
      for (std::size_t ch = 0; ch < channels; ++ch) {
        double pooled = 0.0;
        const float* p = map.raw() + (n * channels + ch) * volume;
        for (std::size_t i = 0; i < volume; ++i) pooled += p[i];
        logit += static_cast<double>(head.weight()[ch]) * (pooled / static_cast<double>(volume));
      }
      const double prob = 1.0 / (1.0 + std::exp(-logit));
      total -= labels[n] ? std::log(prob) : std::log(1.0 - prob);
    }
    return total / static_cast<double>(batch);
  };

  GradCaseResult result;
  result.which = c;
  result.parameters = reg.parameter_count();
  for (auto& [name, t] : reg.params) {
    const Tensor numeric = finite_diff_grad_inplace(f, t, options.step);
    const Tensor& analytic = grads.of(t);
    for (std::size_t i = 0; i < t.numel(); ++i) {
      result.max_abs_error = std::max(result.max_abs_error, std::abs(double(analytic[i]) - double(numeric[i])));
    }
    for (GradMismatch& m : compare_grads(name, analytic, numeric, options.abs_tol, options.rel_tol)) {
      // A mismatch at the default step is re-measured at a third and at three
      // times the step; truncation (curvature) error shrinks with the first,
      // rounding error with the second, while a wrong gradient fails both.
      bool resolved = false;
      for (float step : {options.step / 3.0f, options.step * 3.0f}) {
        const double retry = finite_diff_element(f, t, m.index, step);
        if (grad_close(m.analytic, retry, options.abs_tol, options.rel_tol)) {
          resolved = true;
          ++result.rechecked;
          break;
        }
      }
      if (!resolved) result.mismatches.push_back(m);
    }
    result.checked += t.numel();
  }
  return result;
}

std::vector<GradCaseResult> run_grad_suite(const GradSuiteOptions& options,
                                           const std::function<void(const GradCaseResult&)>& on_case) {
  std::vector<GradCaseResult> out;
  for (nn::Family family : {nn::Family::Residual, nn::Family::Dense}) {
    for (std::size_t rank : {2, 3}) {
      for (std::size_t seed = 0; seed < options.seeds; ++seed) {
        out.push_back(run_grad_case({family, rank, seed}, options));
        if (on_case) on_case(out.back());
      }
    }
  }
  return out;
}

}  // namespace mmf
