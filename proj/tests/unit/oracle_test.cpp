#include <gtest/gtest.h>

#include <cmath>

#include "helpers.hpp"
#include "rdpi/error.hpp"
#include "rdpi/forward_process.hpp"
#include "rdpi/oracle.hpp"
#include "rdpi/sampler.hpp"

namespace rdpi {
namespace {

TEST(Oracle, CompoundMarginalFirstStep) {
  const auto s = test::two_step();
  const auto c = oracle::compound_marginal_coeffs(s, 1);
  EXPECT_NEAR(c.c_z0m, std::sqrt(0.9), 1e-15);
  EXPECT_NEAR(c.c_z0c, std::sqrt(0.9), 1e-15);
  EXPECT_NEAR(c.variance, 0.1, 1e-15);
}

TEST(Oracle, CompoundMarginalDiscrepancy) {
  const auto s = test::two_step();
  const auto c = oracle::compound_marginal_coeffs(s, 2);
  EXPECT_NEAR(c.c_z0c, 1.74295532842377291, 1e-12);
  EXPECT_NEAR(c.c_z0m, std::sqrt(0.72), 1e-15);
  EXPECT_NEAR(c.variance, 0.28, 1e-15);
  EXPECT_GT(c.c_z0c - std::sqrt(0.72), 0.89);
  EXPECT_THROW(oracle::compound_marginal_coeffs(s, 3), IndexError);
}

TEST(Oracle, CompoundVarianceMatchesMarginal) {
  const auto s = NoiseSchedule::linear(50, 1e-4, 0.2);
  for (int t = 1; t <= 50; ++t) EXPECT_NEAR(oracle::compound_marginal_coeffs(s, t).variance, 1.0 - s.alpha_cum(t), 1e-12);
}

TEST(Oracle, GaussianCondition) {
  const auto p = oracle::gaussian_condition(2.0, 1.0, 2.0);
  EXPECT_NEAR(p.variance, 1.0, 1e-15);
  EXPECT_NEAR(p.mean(4.0, 2.0, 0.0), 3.0, 1e-15);
  EXPECT_THROW(oracle::gaussian_condition(0.0, 1.0, 1.0), DomainError);
  EXPECT_THROW(oracle::gaussian_condition(1.0, 1.0, -1.0), DomainError);
}

TEST(Oracle, ConditionedPosteriorVarianceIsBetaTilde) {
  const auto s = NoiseSchedule::linear(30, 1e-3, 0.3);
  for (int t = 2; t <= 30; ++t) EXPECT_NEAR(oracle::conditioned_posterior(s, t).variance, s.beta_tilde(t), 1e-12);
}

TEST(Oracle, UnconditionalReduction) {
  const auto s = NoiseSchedule::linear(8, 1e-3, 0.3);
  const Mask m = test::all(1, 1);
  for (int t = 1; t <= 8; ++t)
    EXPECT_NEAR(posterior_mean_z0(test::scalar(0.3), {test::scalar(-1.2), m}, {test::scalar(0.0), m}, t, s)(0, 0),
                oracle::ddpm_posterior_mean(s, t, 0.3, -1.2), 1e-13);
}

TEST(Oracle, AcceleratedTerminalIsExact) {
  for (int T : {2, 5, 50}) {
    const auto s = NoiseSchedule::linear(T, 1e-4, 0.2);
    const auto law = oracle::sampler_pushforward_coeffs(s, {oracle::Variant::accelerated, T, 0.0});
    EXPECT_NEAR(law.back().c_z0m, 1.0, 1e-8);
    EXPECT_NEAR(law.back().c_z0c, 1.0, 1e-8);
    EXPECT_NEAR(law.back().variance, 0.0, 1e-8);
  }
}

TEST(Oracle, AcceleratedDefaultNoiseKeepsMarginalVariance) {
  const auto s = NoiseSchedule::linear(10, 1e-3, 0.3);
  const auto law = oracle::sampler_pushforward_coeffs(s, {oracle::Variant::accelerated, 10, 1.0, true});
  for (int i = 1; i < 10; ++i) EXPECT_NEAR(law[static_cast<std::size_t>(i)].variance, 1.0 - s.alpha_cum(10 - i), 1e-12);
}

TEST(Oracle, AncestralSingleStepIsExact) {
  const auto s = NoiseSchedule::linear(1, 0.3, 0.3);
  for (auto v : {oracle::Variant::ancestral_stepwise, oracle::Variant::ancestral_consistent}) {
    const auto law = oracle::sampler_pushforward_coeffs(s, {v});
    EXPECT_NEAR(law.back().c_z0m, 1.0, 1e-14);
    EXPECT_NEAR(law.back().c_z0c, 1.0, 1e-14);
    EXPECT_EQ(law.back().variance, 0.0);
  }
}

// The stepwise-form chain leaves the z0c coefficient far from the marginal mid-chain.
TEST(Oracle, StepwiseFormDriftsMidChain) {
  const auto s = NoiseSchedule::linear(50, 1e-4, 0.2);
  const auto stepwise = oracle::sampler_pushforward_coeffs(s, {oracle::Variant::ancestral_stepwise});
  const auto consistent = oracle::sampler_pushforward_coeffs(s, {oracle::Variant::ancestral_consistent});
  double worst_stepwise = 0.0, worst_consistent = 0.0;
  for (std::size_t i = 1; i + 1 < stepwise.size(); ++i) {
    worst_stepwise = std::max(worst_stepwise, std::abs(stepwise[i].c_z0c - stepwise[i].c_z0m));
    worst_consistent = std::max(worst_consistent, std::abs(consistent[i].c_z0c - consistent[i].c_z0m));
  }
  EXPECT_GT(worst_stepwise, 1.0);
  EXPECT_LT(worst_consistent, 1e-12);
}

TEST(Oracle, FiniteDifferenceSecondOrder) {
  Rng rng(3);
  const DenoiserConfig cfg{8, 3, 2, 4, 3, 5};
  const auto p = DenoiserParams::init(cfg, rng);
  std::vector<DenoiserExample> batch(1);
  batch[0] = {rng.normal_grid(4, 3), rng.normal_grid(4, 3), 3, rng.normal_grid(4, 3), test::all(4, 3), {}};
  const auto g = test::line3();
  const auto fine = oracle::finite_diff_check(p, batch, g, 1e-3);
  const auto coarse = oracle::finite_diff_check(p, batch, g, 2e-3);
  EXPECT_LE(fine.max_rel_error, 1e-4);
  EXPECT_EQ(fine.parameters, p.parameter_count());
  // truncation error ~ h^2: doubling h should raise it by roughly 4x
  const double ratio = coarse.max_abs_error / fine.max_abs_error;
  EXPECT_GT(ratio, 2.5);
  EXPECT_LT(ratio, 6.0);
}

}  // namespace
}  // namespace rdpi
