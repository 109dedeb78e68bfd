#include <cmath>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "../support/oracles.hpp"
#include "zpressor/autograd.hpp"
#include "zpressor/error.hpp"
#include "zpressor/objective.hpp"

namespace zp {
namespace {

TEST(Kl, PriorMatchIsZero) {
  EXPECT_EQ(kl_diag_gaussian(Tensor({3, 4}), Tensor({3, 4})), 0.0);
}

TEST(Kl, SingleElementClosedForm) {
  EXPECT_DOUBLE_EQ(kl_diag_gaussian(Tensor({1}, {1.f}), Tensor({1}, {0.f})), 0.5);
}

TEST(Kl, SumsLatentDimAndAveragesRows) {
  const Tensor mean({2, 2}, {1, 0, 0, 2}), logvar({2, 2});
  // Row sums: 0.5 and 2.0; averaged over the two rows.
  EXPECT_DOUBLE_EQ(kl_diag_gaussian(mean, logvar), 1.25);
}

TEST(Kl, ShapeMismatchThrows) {
  EXPECT_THROW(kl_diag_gaussian(Tensor({2, 3}), Tensor({3, 2})), ShapeError);
}

TEST(Kl, MatchesMonteCarlo) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n(0.0, 0.7);
  for (int trial = 0; trial < 3; ++trial) {
    std::vector<double> mu(4), lv(4);
    Tensor mt({4}), lt({4});
    for (int d = 0; d < 4; ++d) {
      mt[d] = static_cast<float>(n(rng));
      lt[d] = static_cast<float>(n(rng));
      mu[d] = mt[d];
      lv[d] = lt[d];
    }
    const double closed = kl_diag_gaussian(mt, lt);
    const double mc = oracle::monte_carlo_kl(mu, lv, 1'000'000, trial);
    EXPECT_NEAR(mc, closed, 0.01 * closed);
  }
}

TEST(Kl, NonNegativeAndZeroOnlyAtPrior) {
  std::mt19937_64 rng(2);
  std::normal_distribution<float> n(0.f, 3.f);
  for (int trial = 0; trial < 2000; ++trial) {
    Tensor m({2, 3}), l({2, 3});
    for (auto& v : m.span()) v = n(rng);
    for (auto& v : l.span()) v = n(rng);
    EXPECT_GE(kl_diag_gaussian(m, l), -1e-9);
  }
  Tensor nudge({1}, {1e-3f});
  EXPECT_GT(kl_diag_gaussian(nudge, Tensor({1})), 0.0);
  EXPECT_GT(kl_diag_gaussian(Tensor({1}), nudge), 0.0);
}

TEST(TaskLoss, ZeroConstantAndRecomputation) {
  std::mt19937_64 rng(3);
  std::normal_distribution<float> n;
  Tensor a({4, 3}), b({4, 3});
  for (auto& v : a.span()) v = n(rng);
  for (auto& v : b.span()) v = n(rng);
  EXPECT_EQ(task_loss(a, a), 0.0);
  Tensor shifted = a;
  for (auto& v : shifted.span()) v += 2.f;
  EXPECT_NEAR(task_loss(shifted, a), 4.0, 1e-5);
  double se = 0;
  for (std::size_t r = 0; r < 4; ++r) {
    for (std::size_t c = 0; c < 3; ++c) se += std::pow(double(a.at(r, c)) - b.at(r, c), 2);
  }
  EXPECT_NEAR(task_loss(a, b), se / 12, 1e-12);
  EXPECT_THROW(task_loss(a, Tensor({3, 4})), ShapeError);
}

TEST(IbLoss, ArithmeticAndDefaults) {
  EXPECT_EQ(kDefaultBeta, 1e-5);
  const LossReport r = make_report(1.0, 1e5, 1e-5);
  EXPECT_NEAR(r.total, 2.0, 1e-12);
  EXPECT_THROW(make_report(1.0, 1.0, -1e-3), InvalidInput);
}

TEST(IbLoss, BetaZeroIsTaskExactly) {
  LatentState z;
  z.posterior_mean = Tensor({2, 3}, {1, 2, 3, 4, 5, 6});
  z.posterior_logvar = Tensor({2, 3}, {0.5f, -1, 2, 0, 0, 1});
  const Tensor pred({2, 2}, {0.1f, 0.3f, 0.7f, 0.2f}), target({2, 2}, {0.2f, 0.1f, 0.5f, 0.9f});
  const LossReport r = ib_loss(pred, target, z, 0.0);
  EXPECT_EQ(r.total, r.task);
  EXPECT_GT(r.kl, 0.0);
  const LossReport s = ib_loss(pred, target, z, 1e-2);
  EXPECT_NEAR(s.total, s.task + 1e-2 * s.kl, 1e-9);
  EXPECT_EQ(s.kl, kl_diag_gaussian(z.posterior_mean, z.posterior_logvar));
}

// Gradients of total w.r.t. posterior parameters are affine in beta.
TEST(IbLoss, GradientLinearInBeta) {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n;
  Tensor64 mean({3, 4}), logvar({3, 4}), noise({3, 4}), target({3, 4});
  for (auto* t : {&mean, &logvar, &noise, &target}) {
    for (auto& v : t->span()) v = n(rng);
  }
  auto grads = [&](double beta) {
    ad::Tape<double> tape;
    auto m = tape.leaf(mean), l = tape.leaf(logvar);
    const ad::Var<double> terms[] = {ad::mse(ad::reparameterize(m, l, noise), target),
                                     ad::kl_diag_gaussian(m, l)};
    const double w[] = {1.0, beta};
    tape.backward(ad::weighted_sum<double>(terms, w));
    return std::pair{m.grad(), l.grad()};
  };
  const double b = 0.37;
  const auto g0 = grads(0), g1 = grads(b), g2 = grads(2 * b);
  for (std::size_t i = 0; i < mean.numel(); ++i) {
    const double em = g0.first[i] + 2 * (g1.first[i] - g0.first[i]);
    const double el = g0.second[i] + 2 * (g1.second[i] - g0.second[i]);
    EXPECT_NEAR(g2.first[i], em, 1e-6 * std::max(1.0, std::abs(em)));
    EXPECT_NEAR(g2.second[i], el, 1e-6 * std::max(1.0, std::abs(el)));
  }
}

TEST(IbLoss, AutogradKlMatchesClosedForm) {
  const Tensor m({2, 3}, {0.5f, -1, 2, 0, 0.3f, -0.2f});
  const Tensor l({2, 3}, {0.1f, -0.5f, 0.4f, 1, -2, 0});
  ad::Tape<double> tape;
  const auto kl = ad::kl_diag_gaussian(tape.constant(m.cast<double>()),
                                       tape.constant(l.cast<double>()));
  EXPECT_NEAR(kl.value().item(), kl_diag_gaussian(m, l), 1e-9);
}

}  // namespace
}  // namespace zp
