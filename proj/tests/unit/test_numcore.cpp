#include <cmath>
#include <numeric>
#include <random>

#include <gtest/gtest.h>

#include "../support/grad_cases.hpp"
#include "zpressor/autograd.hpp"
#include "zpressor/error.hpp"
#include "zpressor/grad_check.hpp"
#include "zpressor/ops.hpp"
#include "zpressor/tensor.hpp"

namespace zp {
namespace {

Tensor64 random64(Shape shape, std::mt19937_64& rng, double scale = 1.0) {
  Tensor64 t(std::move(shape));
  std::normal_distribution<double> n(0.0, scale);
  for (auto& v : t.span()) v = n(rng);
  return t;
}

TEST(Tensor, RejectsNonFiniteAndMismatchedData) {
  const float nan = std::nanf("");
  EXPECT_THROW(Tensor({2}, {1.f, nan}), InvalidInput);
  EXPECT_THROW(Tensor({2, 2}, {1.f, 2.f, 3.f}), ShapeError);
  Tensor t({2, 3}, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(t.rows(), 2u);
  EXPECT_EQ(t.cols(), 3u);
  EXPECT_FLOAT_EQ(t.at(1, 2), 6.f);
}

TEST(Tensor, TracksLiveAndPeakBytes) {
  const std::size_t before = memory::live_bytes();
  memory::reset_peak();
  {
    Tensor t({1000});
    EXPECT_GE(memory::live_bytes(), before + 1000 * sizeof(float));
  }
  EXPECT_EQ(memory::live_bytes(), before);
  EXPECT_GE(memory::peak_bytes(), before + 1000 * sizeof(float));
}

TEST(Linear, IdentityWeights) {
  Tensor x({2, 3}, {1, -2, 3, 0.5f, 0, 7});
  Tensor w({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  EXPECT_EQ(ops::linear(x, w, Tensor({3})), x);
}

TEST(Linear, HandProduct) {
  const Tensor y = ops::linear(Tensor({2}, {1, 2}), Tensor({2, 2}, {1, 1, 0, 1}),
                               Tensor({2}, {0, 1}));
  EXPECT_EQ(y, Tensor({2}, {3, 3}));
}

TEST(Linear, ShapeMismatchThrows) {
  EXPECT_THROW(ops::linear(Tensor({2, 3}), Tensor({4, 2}), Tensor({4})), ShapeError);
  EXPECT_THROW(ops::linear(Tensor({2, 2}), Tensor({4, 2}), Tensor({3})), ShapeError);
}

TEST(LayerNorm, ConstantRowCollapsesToShift) {
  const Tensor y = ops::layer_norm(Tensor::full({1, 4}, 3.f), Tensor::full({4}, 1.f),
                                   Tensor({4}));
  for (float v : y.span()) EXPECT_FLOAT_EQ(v, 0.f);
}

TEST(LayerNorm, TwoElementClosedForm) {
  const Tensor64 y = ops::layer_norm(Tensor64({2}, {1, 3}), Tensor64({2}, {1, 1}),
                                     Tensor64({2}), 1e-12);
  EXPECT_NEAR(y[0], -1.0, 1e-9);
  EXPECT_NEAR(y[1], 1.0, 1e-9);
}

TEST(LayerNorm, RowMeanMatchesShiftMean) {
  std::mt19937_64 rng(3);
  const Tensor64 x = random64({5, 8}, rng, 4.0);
  const Tensor64 shift = random64({8}, rng);
  const Tensor64 y = ops::layer_norm(x, Tensor64::full({8}, 1.0), shift);
  const double shift_mean = std::accumulate(shift.span().begin(), shift.span().end(), 0.0) / 8;
  for (std::size_t r = 0; r < 5; ++r) {
    double m = 0;
    for (std::size_t c = 0; c < 8; ++c) m += y.at(r, c) - shift[c];
    EXPECT_NEAR(m / 8 + shift_mean, shift_mean, 1e-5);
  }
}

TEST(LayerNorm, EmptyFeatureDimThrows) {
  EXPECT_THROW(ops::layer_norm(Tensor({2, 0}), Tensor({0}), Tensor({0})), ShapeError);
}

TEST(Softmax, UniformAndClosedForm) {
  const Tensor u = ops::softmax(Tensor::full({1, 4}, 2.f));
  for (float v : u.span()) EXPECT_NEAR(v, 0.25f, 1e-7);
  const Tensor64 s = ops::softmax(Tensor64({2}, {0.0, std::log(3.0)}));
  EXPECT_NEAR(s[0], 0.25, 1e-12);
  EXPECT_NEAR(s[1], 0.75, 1e-12);
}

TEST(Softmax, ShiftInvariantPositiveAndNormalized) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor64 x = random64({3, 7}, rng, 10.0);
    Tensor64 shifted = x;
    for (std::size_t c = 0; c < 7; ++c) shifted.at(1, c) += 123.0;
    const Tensor64 a = ops::softmax(x), b = ops::softmax(shifted);
    for (std::size_t r = 0; r < 3; ++r) {
      double sum = 0;
      for (std::size_t c = 0; c < 7; ++c) {
        EXPECT_GT(a.at(r, c), 0.0);
        EXPECT_NEAR(a.at(r, c), b.at(r, c), 1e-6);
        sum += a.at(r, c);
      }
      EXPECT_NEAR(sum, 1.0, 1e-6);
    }
  }
}

TEST(Gelu, ExactErfValue) {
  EXPECT_NEAR(ops::gelu(1.0), 0.8413447460685429, 1e-12);
  EXPECT_NEAR(ops::gelu(0.0), 0.0, 0.0);
}

TEST(Attention, SingleKeyReturnsItsValue) {
  std::mt19937_64 rng(5);
  const Tensor64 q = random64({3, 4}, rng), k = random64({1, 4}, rng), v = random64({1, 4}, rng);
  const Tensor64 y = ops::attention(q, k, v, 2);
  for (std::size_t r = 0; r < 3; ++r) {
    for (std::size_t c = 0; c < 4; ++c) EXPECT_NEAR(y.at(r, c), v[c], 1e-12);
  }
}

TEST(Attention, HandComputedSingleHead) {
  // q = [1, 0]; keys [1, 0] and [0, 1]; scale 1/sqrt(2).
  const Tensor64 q({1, 2}, {1, 0}), k({2, 2}, {1, 0, 0, 1}), v({2, 2}, {2, 4, 6, 8});
  const double w0 = std::exp(1 / std::sqrt(2.0)) / (std::exp(1 / std::sqrt(2.0)) + 1.0);
  const Tensor64 y = ops::attention(q, k, v, 1);
  EXPECT_NEAR(y[0], w0 * 2 + (1 - w0) * 6, 1e-6);
  EXPECT_NEAR(y[1], w0 * 4 + (1 - w0) * 8, 1e-6);
}

TEST(Attention, KeyValuePermutationInvariant) {
  std::mt19937_64 rng(9);
  const Tensor64 q = random64({4, 8}, rng), k = random64({5, 8}, rng), v = random64({5, 8}, rng);
  const std::vector<std::size_t> perm = {3, 0, 4, 1, 2};
  Tensor64 kp({5, 8}), vp({5, 8});
  for (std::size_t i = 0; i < 5; ++i) {
    for (std::size_t c = 0; c < 8; ++c) {
      kp.at(i, c) = k.at(perm[i], c);
      vp.at(i, c) = v.at(perm[i], c);
    }
  }
  const Tensor64 a = ops::attention(q, k, v, 4), b = ops::attention(q, kp, vp, 4);
  for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_NEAR(a[i], b[i], 1e-6);
}

TEST(Attention, OutputIsConvexCombinationOfValues) {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 10; ++trial) {
    const Tensor64 q = random64({3, 4}, rng, 3.0), k = random64({6, 4}, rng, 3.0),
                   v = random64({6, 4}, rng);
    const Tensor64 y = ops::attention(q, k, v, 1);
    for (std::size_t c = 0; c < 4; ++c) {
      double lo = 1e300, hi = -1e300;
      for (std::size_t r = 0; r < 6; ++r) {
        lo = std::min(lo, v.at(r, c));
        hi = std::max(hi, v.at(r, c));
      }
      for (std::size_t r = 0; r < 3; ++r) {
        EXPECT_GE(y.at(r, c), lo - 1e-6);
        EXPECT_LE(y.at(r, c), hi + 1e-6);
      }
    }
  }
}

TEST(Attention, ShapeErrors) {
  EXPECT_THROW(ops::attention(Tensor({2, 6}), Tensor({3, 6}), Tensor({3, 6}), 4), ShapeError);
  EXPECT_THROW(ops::attention(Tensor({2, 4}), Tensor({0, 4}), Tensor({0, 4}), 2), ShapeError);
  EXPECT_THROW(ops::attention(Tensor({2, 4}), Tensor({3, 4}), Tensor({2, 4}), 2), ShapeError);
}

TEST(Mlp, ZeroSecondLayerYieldsBias) {
  std::mt19937_64 rng(2);
  const Tensor x = random64({3, 4}, rng).cast<float>();
  ops::LinearParams<float> p1{random64({8, 4}, rng).cast<float>(), Tensor({8})};
  ops::LinearParams<float> p2{Tensor({4, 8}), Tensor({4}, {1, 2, 3, 4})};
  const Tensor y = ops::mlp(x, p1, p2);
  for (std::size_t r = 0; r < 3; ++r) {
    for (std::size_t c = 0; c < 4; ++c) EXPECT_FLOAT_EQ(y.at(r, c), static_cast<float>(c + 1));
  }
}

TEST(Mlp, ScalarGeluValue) {
  ops::LinearParams<double> p1{Tensor64({1, 1}, {1}), Tensor64({1})};
  ops::LinearParams<double> p2{Tensor64({1, 1}, {1}), Tensor64({1})};
  EXPECT_NEAR(ops::mlp(Tensor64({1}, {1.0}), p1, p2)[0], 0.8413447460685429, 1e-12);
}

TEST(Ops, Deterministic) {
  std::mt19937_64 rng(4);
  const Tensor q = random64({5, 8}, rng).cast<float>(), k = random64({7, 8}, rng).cast<float>();
  EXPECT_EQ(ops::attention(q, k, k, 2), ops::attention(q, k, k, 2));
}

// ---------------------------------------------------------------------------
// Gradient checks, 64-bit, h = 1e-5, rel tol 1e-3, ten seeds per case.

using ad::Tape;
using ad::Var;
using V = Var<double>;
using Params = std::vector<V>;

class GradSuite : public ::testing::TestWithParam<int> {};

TEST_P(GradSuite, EveryCaseMatchesFiniteDifferences) {
  const auto cases = gradcases::all_cases(GetParam());
  ASSERT_EQ(cases.size(), 9u);
  for (const auto& c : cases) {
    SCOPED_TRACE(c.name);
    const GradCheckReport r = grad_check(c.fn, c.params);
    EXPECT_TRUE(r.passed) << r.summary();
    EXPECT_LE(r.max_rel_error, 1e-3) << r.summary();
    EXPECT_GT(r.entries_checked, 0u);
  }
}

INSTANTIATE_TEST_SUITE_P(TenSeeds, GradSuite, ::testing::Range(0, 10));

TEST(GradCheck, LinearFunctionMatchesToRoundoff) {
  std::mt19937_64 rng(1);
  const Tensor64 x = random64({3, 4}, rng);
  const GradCheckReport r = grad_check([&](Tape<double>& t, const Params& p) {
    return ad::sum(ad::linear(t.constant(x), p[0], p[1]));
  }, {random64({2, 4}, rng), random64({2}, rng)});
  EXPECT_TRUE(r.passed);
  EXPECT_LE(r.max_abs_error, 1e-9);
}

TEST(GradCheck, FlagsCorruptedGradient) {
  std::mt19937_64 rng(1);
  const GradCheckReport r = grad_check([](Tape<double>& t, const Params& p) {
    V y = ad::sum(ad::gelu(p[0]));
    // Identity forward, doubled backward.
    return t.record(y.value(), {y}, [y](const Tensor64& g) {
      Tensor64 g2 = g;
      g2[0] *= 2;
      y.tape().accumulate(y, g2);
    });
  }, {random64({2, 2}, rng)});
  EXPECT_FALSE(r.passed);
  EXPECT_GT(r.max_rel_error, 0.1);
}

TEST(GradCheck, NonFiniteObjectiveThrows) {
  EXPECT_THROW(grad_check([](Tape<double>& t, const Params& p) {
    Tensor64 bad({1});
    bad[0] = std::nan("");
    return t.record(std::move(bad), {p[0]}, [](const Tensor64&) {});
  }, {Tensor64({1}, {1.0})}), CheckFailed);
}

}  // namespace
}  // namespace zp
