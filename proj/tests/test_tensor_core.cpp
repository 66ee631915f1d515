#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "mmf/archive.hpp"
#include "mmf/error.hpp"
#include "mmf/gradcheck.hpp"
#include "mmf/ops.hpp"
#include "mmf/rng.hpp"
#include "mmf/tape.hpp"
#include "mmf/tensor.hpp"
#include "mmf/tensor_io.hpp"
#include "test_support.hpp"

namespace mmf {
namespace {

using testing::TempDir;

Tensor random_tensor(const Shape& shape, std::uint64_t seed, float lo = -1.0f, float hi = 1.0f) {
  return create(shape, Init::uniform(seed, lo, hi));
}

// Gradient of sum(f(x) * r) / numel w.r.t. x, both analytic and numeric.
template <typename F>
void expect_grad_matches(const Tensor& x0, F&& fn, double abs_tol = 1e-4, double rel_tol = 1e-2) {
  Tensor x = x0.clone();
  x.set_requires_grad(true);
  Tensor r;
  const auto loss = [&](Tape& tape, const Tensor& in) {
    const Var out = fn(tape, tape.leaf(in));
    if (r.shape() != out.shape()) r = random_tensor(out.shape(), 99);
    const Var weighted = ops::mul(tape, out, Tape::constant(r));
    return ops::scale(tape, ops::sum(tape, weighted), 1.0f / static_cast<float>(out.value.numel()));
  };
  Tape tape;
  const Var l = loss(tape, x);
  const Tensor analytic = backward(tape, l).of(x);
  const Tensor numeric = finite_diff_grad(
      [&](const Tensor& in) {
        Tape probe(Mode::Train, false);
        Tensor copy = in.clone();
        return static_cast<double>(loss(probe, copy).value.item());
      },
      x, 1e-2f);
  const auto bad = compare_grads("x", analytic, numeric, abs_tol, rel_tol);
  EXPECT_TRUE(bad.empty()) << bad.size() << " mismatches, first at " << bad.front().index << ": "
                           << bad.front().analytic << " vs " << bad.front().numeric;
}

TEST(Tensor, ZeroExtentIsRejected) { EXPECT_THROW(Tensor(Shape{2, 0, 3}), InvalidShape); }

TEST(Tensor, KaimingBoundFollowsFanIn) {
  const Tensor w = create({8, 3, 3, 3}, Init::kaiming(5));
  const float bound = std::sqrt(6.0f / 27.0f);
  for (float v : w.data()) {
    EXPECT_LE(std::abs(v), bound);
  }
  EXPECT_TRUE(create({8, 3, 3, 3}, Init::kaiming(5)).bit_equal(w));
  EXPECT_FALSE(create({8, 3, 3, 3}, Init::kaiming(6)).bit_equal(w));
}

TEST(Tensor, NonFiniteValuesAreRejected) {
  EXPECT_THROW(Tensor(Shape{2}, std::vector<float>{1.0f, std::nanf("")}), NumericError);
}

TEST(Tensor, ReshapeSharesAndCloneCopies) {
  Tensor a = random_tensor({2, 6}, 1);
  Tensor b = a.reshape({3, 4});
  Tensor c = a.clone();
  EXPECT_TRUE(a.same_storage(b));
  EXPECT_FALSE(a.same_storage(c));
  EXPECT_THROW(a.reshape({5}), ShapeMismatch);
}

TEST(TensorIo, RoundTripIsBitExact) {
  TempDir dir;
  for (const Shape& shape : {Shape{}, Shape{7}, Shape{2, 3}, Shape{2, 1, 4, 5, 3}}) {
    Tensor t = random_tensor(shape, shape.size() + 3, -1e3f, 1e3f);
    if (t.numel() > 1) t.raw_mut()[0] = -0.0f;
    save_tensor(dir / "t.ften", t);
    EXPECT_TRUE(load_tensor(dir / "t.ften").bit_equal(t)) << to_string(shape);
  }
}

TEST(TensorIo, HeaderLayoutIsLittleEndian) {
  std::stringstream ss;
  write_ften(ss, Tensor(Shape{2, 3}, std::vector<float>{1, 2, 3, 4, 5, 6}));
  const std::string bytes = ss.str();
  ASSERT_EQ(bytes.size(), 4u + 2 + 2 + 2 * 8 + 6 * 4);
  EXPECT_EQ(bytes.substr(0, 4), "FTEN");
  EXPECT_EQ(static_cast<unsigned char>(bytes[4]), kFtenVersion);
  EXPECT_EQ(static_cast<unsigned char>(bytes[5]), 0);
  EXPECT_EQ(static_cast<unsigned char>(bytes[6]), 2);  // rank
  EXPECT_EQ(static_cast<unsigned char>(bytes[8]), 2);  // first extent
  EXPECT_EQ(static_cast<unsigned char>(bytes[16]), 3);
  float first;
  std::memcpy(&first, bytes.data() + 24, 4);
  EXPECT_EQ(first, 1.0f);
}

TEST(TensorIo, BadMagicAndTruncationFailLoudly) {
  std::stringstream bad("NOPE....");
  EXPECT_THROW(read_ften(bad), FormatError);
  std::stringstream ss;
  write_ften(ss, random_tensor({4, 4}, 2));
  std::string bytes = ss.str();
  bytes.resize(bytes.size() - 3);
  std::stringstream truncated(bytes);
  EXPECT_THROW(read_ften(truncated), FormatError);
}

TEST(Tape, BackwardNeedsScalarLoss) {
  Tensor x = random_tensor({3}, 1);
  x.set_requires_grad(true);
  Tape tape;
  const Var y = ops::relu(tape, tape.leaf(x));
  EXPECT_THROW(backward(tape, y), ShapeMismatch);
}

TEST(Tape, UnusedLeafGetsZeroGradient) {
  Tensor x = random_tensor({3}, 1), unused = random_tensor({2}, 2);
  x.set_requires_grad(true);
  unused.set_requires_grad(true);
  Tape tape;
  tape.leaf(unused);
  const Var loss = ops::sum(tape, tape.leaf(x));
  const Gradients g = backward(tape, loss);
  for (float v : g.of(unused).data()) EXPECT_EQ(v, 0.0f);
  for (float v : g.of(x).data()) EXPECT_EQ(v, 1.0f);
}

TEST(Tape, SharedLeafAccumulatesBothUses) {
  Tensor x(Shape{2}, std::vector<float>{1.5f, -2.0f});
  x.set_requires_grad(true);
  Tape tape;
  const Var a = tape.leaf(x), b = tape.leaf(x);
  const Var loss = ops::sum(tape, ops::mul(tape, a, b));  // sum x^2
  const Tensor g = backward(tape, loss).of(x);
  EXPECT_FLOAT_EQ(g[0], 3.0f);
  EXPECT_FLOAT_EQ(g[1], -4.0f);
}

TEST(Tape, NonRecordingTapeKeepsNoNodes) {
  Tensor x = random_tensor({4}, 1);
  x.set_requires_grad(true);
  Tape tape(Mode::Eval, false);
  ops::relu(tape, tape.leaf(x));
  EXPECT_EQ(tape.size(), 0u);
}

TEST(Ops, ElementwiseGradients) {
  const Tensor b = random_tensor({3, 4}, 7);
  expect_grad_matches(random_tensor({3, 4}, 1), [&](Tape& t, const Var& x) { return ops::add(t, x, Tape::constant(b)); });
  expect_grad_matches(random_tensor({3, 4}, 2), [&](Tape& t, const Var& x) { return ops::mul(t, x, Tape::constant(b)); });
  expect_grad_matches(random_tensor({3, 4}, 3), [&](Tape& t, const Var& x) { return ops::sigmoid(t, x); });
  expect_grad_matches(random_tensor({3, 4}, 4), [&](Tape& t, const Var& x) { return ops::scale(t, x, -2.5f); });
}

TEST(Ops, MatmulAndLinearGradients) {
  const Tensor w = random_tensor({5, 4}, 8), bias = random_tensor({5}, 9), rhs = random_tensor({4, 2}, 10);
  expect_grad_matches(random_tensor({3, 4}, 1), [&](Tape& t, const Var& x) {
    return ops::linear(t, x, Tape::constant(w), Tape::constant(bias));
  });
  expect_grad_matches(random_tensor({3, 4}, 2), [&](Tape& t, const Var& x) { return ops::matmul(t, x, Tape::constant(rhs)); });
}

TEST(Ops, PoolingGradients) {
  expect_grad_matches(random_tensor({2, 3, 4, 6}, 1),
                      [&](Tape& t, const Var& x) { return ops::avgpool(t, x, PoolSpec::uniform(2, 2, 2)); });
  expect_grad_matches(random_tensor({2, 3, 4, 6}, 2), [&](Tape& t, const Var& x) { return ops::global_avg_pool(t, x); });
  // Distinct, well separated values keep the max away from ties.
  Tensor x(Shape{1, 2, 4, 4});
  for (std::size_t i = 0; i < x.numel(); ++i) x.raw_mut()[i] = static_cast<float>((i * 7) % 32) * 0.1f;
  expect_grad_matches(x, [&](Tape& t, const Var& v) { return ops::maxpool(t, v, PoolSpec::uniform(2, 2, 2)); });
}

TEST(Ops, BatchnormTrainGradient) {
  BatchNormState state{Tensor(Shape{3}), create({3}, Init::constant(1.0f))};
  const Tensor gamma = random_tensor({3}, 5, 0.5f, 1.5f), beta = random_tensor({3}, 6);
  expect_grad_matches(random_tensor({4, 3, 3, 3}, 1), [&](Tape& t, const Var& x) {
    return ops::batchnorm(t, x, Tape::constant(gamma), Tape::constant(beta), state);
  });
}

TEST(Ops, ConvGradientAgainstFiniteDifferences) {
  const ConvSpec spec = ConvSpec::uniform(2, 2, 3, 3, 2, 1);
  const Tensor w = random_tensor(spec.weight_shape(), 4);
  expect_grad_matches(random_tensor({2, 2, 5, 6}, 1),
                      [&](Tape& t, const Var& x) { return ops::conv(t, x, Tape::constant(w), nullptr, spec); });
  Tensor w_leaf = w.clone();
  w_leaf.set_requires_grad(true);
  const Tensor x = random_tensor({2, 2, 5, 6}, 2);
  expect_grad_matches(w, [&](Tape& t, const Var& wv) { return ops::conv(t, Tape::constant(x), wv, nullptr, spec); });
}

TEST(Ops, ConvMatchesNaiveOracle) {
  Rng rng(11);
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t rank = 1 + trial % 3;
    ConvSpec spec;
    spec.in_channels = 1 + rng.below(3);
    spec.out_channels = 1 + rng.below(4);
    Shape xs{1 + rng.below(3), spec.in_channels};
    for (std::size_t d = 0; d < rank; ++d) {
      spec.kernel.push_back(1 + rng.below(3));
      spec.stride.push_back(1 + rng.below(2));
      spec.padding.push_back(rng.below(2));
      xs.push_back(spec.kernel.back() + rng.below(6));
    }
    const Tensor x = random_tensor(xs, 100 + trial), w = random_tensor(spec.weight_shape(), 200 + trial);
    const Tensor b = random_tensor({spec.out_channels}, 300 + trial);
    Tape tape(Mode::Eval, false);
    const Var bias = Tape::constant(b);
    const Tensor got =
        ops::conv(tape, Tape::constant(x), Tape::constant(w), trial % 2 ? &bias : nullptr, spec).value;
    const Tensor want = testing::naive_conv(x, w, trial % 2 ? &b : nullptr, spec);
    ASSERT_EQ(got.shape(), want.shape());
    for (std::size_t i = 0; i < got.numel(); ++i) ASSERT_NEAR(got[i], want[i], 1e-5) << "trial " << trial;
  }
}

TEST(Ops, ConvBatchInvariance) {
  const ConvSpec spec = ConvSpec::uniform(3, 2, 3, 3, 1, 1);
  const Tensor w = random_tensor(spec.weight_shape(), 1);
  const Tensor x = random_tensor({3, 2, 3, 4, 5}, 2);
  Tape tape(Mode::Eval, false);
  const Tensor all = ops::conv(tape, Tape::constant(x), Tape::constant(w), nullptr, spec).value;
  const std::size_t per_in = x.numel() / 3, per_out = all.numel() / 3;
  for (std::size_t n = 0; n < 3; ++n) {
    Tensor one(Shape{1, 2, 3, 4, 5}, std::vector<float>(x.raw() + n * per_in, x.raw() + (n + 1) * per_in));
    const Tensor y = ops::conv(tape, Tape::constant(one), Tape::constant(w), nullptr, spec).value;
    EXPECT_EQ(std::memcmp(y.raw(), all.raw() + n * per_out, per_out * sizeof(float)), 0);
  }
}

// Output-shape law over the exhaustive small grid, with the formula derived
// independently: count window positions p*s such that p*s + k <= in + 2*pad.
TEST(ShapeLaws, ConvOutputExtentExhaustive) {
  for (std::size_t in = 1; in <= 16; ++in)
    for (std::size_t k = 1; k <= 5; ++k)
      for (std::size_t s = 1; s <= 3; ++s)
        for (std::size_t p = 0; p <= 2; ++p) {
          std::size_t positions = 0;
          for (std::size_t start = 0; start + k <= in + 2 * p; start += s) ++positions;
          if (positions == 0) {
            EXPECT_THROW(conv_output_extent(in, k, s, p), InvalidShape);
          } else {
            EXPECT_EQ(conv_output_extent(in, k, s, p), positions) << in << " " << k << " " << s << " " << p;
          }
        }
}

TEST(ShapeLaws, ConvAndPoolOpsProduceLawfulShapes) {
  Tape tape(Mode::Eval, false);
  for (std::size_t in = 1; in <= 16; in += 3)
    for (std::size_t k = 1; k <= 5; ++k)
      for (std::size_t s = 1; s <= 3; ++s)
        for (std::size_t p = 0; p <= 2; ++p) {
          const ConvSpec spec = ConvSpec::uniform(2, 1, 1, k, s, p);
          const Tensor x(Shape{1, 1, in, in + 1});
          const Tensor w = create(spec.weight_shape(), Init::constant(1.0f));
          if (k > in + 2 * p) {
            EXPECT_THROW(ops::conv(tape, Tape::constant(x), Tape::constant(w), nullptr, spec), InvalidShape);
            continue;
          }
          const Tensor y = ops::conv(tape, Tape::constant(x), Tape::constant(w), nullptr, spec).value;
          EXPECT_EQ(y.shape(), (Shape{1, 1, conv_output_extent(in, k, s, p), conv_output_extent(in + 1, k, s, p)}));
          if (k <= in) {
            const Tensor m = ops::maxpool(tape, Tape::constant(x), PoolSpec::uniform(2, k, s)).value;
            EXPECT_EQ(m.extent(2), conv_output_extent(in, k, s, 0));
          } else {
            EXPECT_THROW(ops::maxpool(tape, Tape::constant(x), PoolSpec::uniform(2, k, s)), InvalidShape);
          }
        }
}

TEST(ShapeLaws, ConcatThenSplitIsBitExact) {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t rank = 1 + rng.below(4), axis = rng.below(rank);
    Shape base;
    for (std::size_t d = 0; d < rank; ++d) base.push_back(1 + rng.below(4));
    std::vector<Var> parts;
    std::vector<std::size_t> sizes;
    for (std::size_t i = 0, n = 1 + rng.below(4); i < n; ++i) {
      Shape s = base;
      s[axis] = 1 + rng.below(3);
      sizes.push_back(s[axis]);
      parts.push_back(Tape::constant(random_tensor(s, 1000 * trial + i)));
    }
    Tape tape(Mode::Eval, false);
    const Var joined = ops::concat(tape, parts, axis);
    const auto back = ops::split(tape, joined, axis, sizes);
    ASSERT_EQ(back.size(), parts.size());
    for (std::size_t i = 0; i < parts.size(); ++i) EXPECT_TRUE(back[i].value.bit_equal(parts[i].value));
  }
}

TEST(Ops, ConcatMismatchNamesShapes) {
  Tape tape;
  const std::vector<Var> parts{Tape::constant(Tensor(Shape{2, 3})), Tape::constant(Tensor(Shape{3, 3}))};
  EXPECT_THROW(ops::concat(tape, parts, 1), ShapeMismatch);
}

TEST(Ops, BatchnormEvalIsPureAndAffine) {
  BatchNormState state{random_tensor({2}, 1), random_tensor({2}, 2, 0.5f, 2.0f)};
  const Tensor mean_before = state.running_mean.clone(), var_before = state.running_var.clone();
  const Tensor gamma = random_tensor({2}, 3), beta = random_tensor({2}, 4);
  const Tensor x = random_tensor({3, 2, 4}, 5);
  Tape tape(Mode::Eval, false);
  const Tensor y1 = ops::batchnorm(tape, Tape::constant(x), Tape::constant(gamma), Tape::constant(beta), state).value;
  const Tensor y2 = ops::batchnorm(tape, Tape::constant(x), Tape::constant(gamma), Tape::constant(beta), state).value;
  EXPECT_TRUE(y1.bit_equal(y2));
  EXPECT_TRUE(state.running_mean.bit_equal(mean_before));
  EXPECT_TRUE(state.running_var.bit_equal(var_before));
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const std::size_t c = (i / 4) % 2;
    const double want = gamma[c] * (x[i] - mean_before[c]) / std::sqrt(var_before[c] + 1e-5) + beta[c];
    EXPECT_NEAR(y1[i], want, 1e-5);
  }
}

TEST(Ops, BatchnormTrainUpdatesRunningStatistics) {
  BatchNormState state{Tensor(Shape{1}), create({1}, Init::constant(1.0f))};
  const Tensor x(Shape{4, 1}, std::vector<float>{1, 2, 3, 6});  // mean 3, unbiased var 14/3
  Tape tape;
  ops::batchnorm(tape, Tape::constant(x), Tape::constant(create({1}, Init::constant(1.0f))),
                 Tape::constant(Tensor(Shape{1})), state);
  EXPECT_NEAR(state.running_mean[0], 0.1 * 3.0, 1e-6);
  EXPECT_NEAR(state.running_var[0], 0.9 + 0.1 * 14.0 / 3.0, 1e-6);
}

TEST(Ops, BceMatchesClosedForm) {
  const Tensor p(Shape{3}, std::vector<float>{0.9f, 0.2f, 0.6f});
  const std::vector<float> y{1, 0, 1};
  Tape tape;
  const double got = ops::bce_loss(tape, Tape::constant(p), y, 2.0f).value.item();
  const double want = -(2.0 * std::log(0.9) + std::log(0.8) + 2.0 * std::log(0.6)) / 3.0;
  EXPECT_NEAR(got, want, 1e-6);
}

TEST(Ops, AverageIsOrderIndependent) {
  std::vector<Var> parts;
  for (int i = 0; i < 3; ++i) parts.push_back(Tape::constant(random_tensor({50}, 10 + i, -1e4f, 1e4f)));
  Tape tape(Mode::Eval, false);
  const Tensor a = ops::average(tape, parts).value;
  std::swap(parts[0], parts[2]);
  std::swap(parts[0], parts[1]);
  EXPECT_TRUE(ops::average(tape, parts).value.bit_equal(a));
}

TEST(Archive, RoundTripAndRestoreChecks) {
  TempDir dir;
  Archive a;
  a.meta["kind"] = "test value with spaces";
  a.tensors = {{"w", random_tensor({3, 2}, 1)}, {"b", random_tensor({2}, 2)}};
  save_archive(dir / "a.mmfa", a);
  const Archive back = load_archive(dir / "a.mmfa");
  EXPECT_EQ(back.meta, a.meta);
  ASSERT_EQ(back.tensors.size(), 2u);
  EXPECT_TRUE(back.find("w")->bit_equal(a.tensors[0].second));

  NamedTensors extra{{"w", Tensor(Shape{3, 2})}, {"b", Tensor(Shape{2})}, {"c", Tensor(Shape{1})}};
  EXPECT_THROW(restore_tensors(back.tensors, extra), FormatError);
  NamedTensors missing{{"w", Tensor(Shape{3, 2})}};
  EXPECT_THROW(restore_tensors(back.tensors, missing), FormatError);
  NamedTensors mis_shaped{{"w", Tensor(Shape{2, 3})}, {"b", Tensor(Shape{2})}};
  try {
    restore_tensors(back.tensors, mis_shaped);
    FAIL() << "shape mismatch accepted";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("w"), std::string::npos);
  }
  NamedTensors ok{{"b", Tensor(Shape{2})}, {"w", Tensor(Shape{3, 2})}};
  restore_tensors(back.tensors, ok);
  EXPECT_TRUE(ok[1].second.bit_equal(a.tensors[0].second));
}

TEST(GradCheck, DetectsWrongGradient) {
  const Tensor x = random_tensor({5}, 1);
  const Tensor numeric = finite_diff_grad(
      [](const Tensor& t) {
        double s = 0;
        for (float v : t.data()) s += 0.5 * double(v) * v;
        return s;
      },
      x, 1e-2f);
  EXPECT_TRUE(compare_grads("x", x, numeric, 1e-4, 1e-2).empty());
  Tensor wrong = x.clone();
  wrong.raw_mut()[2] *= 1.05f;
  wrong.raw_mut()[2] += 0.01f;
  const auto bad = compare_grads("x", wrong, numeric, 1e-4, 1e-2);
  ASSERT_EQ(bad.size(), 1u);
  EXPECT_EQ(bad[0].index, 2u);
}

TEST(GradCheck, ActivationPatternReplayFreezesBranches) {
  Tensor x(Shape{4}, std::vector<float>{-1e-4f, 2.0f, -3.0f, 1e-4f});
  ActivationPattern pattern;
  Tape rec(Mode::Train, false);
  rec.set_pattern(&pattern);
  ops::relu(rec, Tape::constant(x));
  pattern.start_replay();
  // Flip the signs of the near-zero entries; replay keeps the old branches.
  Tensor moved(Shape{4}, std::vector<float>{1e-4f, 2.0f, -3.0f, -1e-4f});
  Tape replay(Mode::Train, false);
  replay.set_pattern(&pattern);
  const Tensor y = ops::relu(replay, Tape::constant(moved)).value;
  EXPECT_EQ(y[0], 0.0f);
  EXPECT_EQ(y[1], 2.0f);
  EXPECT_EQ(y[3], -1e-4f);
}

}  // namespace
}  // namespace mmf
