#include <gtest/gtest.h>

#include <cmath>

#include "helpers.hpp"
#include "rdpi/error.hpp"
#include "rdpi/rng.hpp"
#include "rdpi/schedule.hpp"

namespace rdpi {
namespace {

TEST(Schedule, LinearEndpoints) {
  const auto s = NoiseSchedule::linear(50, 1e-4, 0.2);
  EXPECT_EQ(s.steps(), 50);
  EXPECT_DOUBLE_EQ(s.beta(1), 1e-4);
  EXPECT_DOUBLE_EQ(s.beta(50), 0.2);
  for (int t = 2; t < 50; ++t) EXPECT_NEAR(s.beta(t + 1) - s.beta(t), s.beta(t) - s.beta(t - 1), 1e-15);
}

TEST(Schedule, SingleStep) {
  const auto s = NoiseSchedule::linear(1, 0.3, 0.3);
  EXPECT_DOUBLE_EQ(s.beta(1), 0.3);
  EXPECT_DOUBLE_EQ(s.alpha_cum(1), 0.7);
  EXPECT_EQ(s.beta_tilde(1), 0.0);
}

TEST(Schedule, TwoStepValues) {
  const auto s = test::two_step();
  EXPECT_NEAR(s.alpha_step(1), 0.9, 1e-15);
  EXPECT_NEAR(s.alpha_step(2), 0.8, 1e-15);
  EXPECT_NEAR(s.alpha_cum(1), 0.9, 1e-15);
  EXPECT_NEAR(s.alpha_cum(2), 0.72, 1e-15);
  EXPECT_NEAR(s.beta_tilde(2), 0.0714285714285714285714, 1e-15);
  EXPECT_EQ(s.alpha_cum(0), 1.0);
}

TEST(Schedule, StepOutOfRange) {
  const auto s = test::two_step();
  EXPECT_THROW((void)s.at(3), IndexError);
  EXPECT_THROW((void)s.at(0), IndexError);
  EXPECT_THROW((void)s.alpha_cum(-1), IndexError);
  EXPECT_NO_THROW((void)s.alpha_cum(2));
}

TEST(Schedule, RejectsBadBetas) {
  EXPECT_THROW(NoiseSchedule::linear(0, 0.1, 0.2), ConfigError);
  EXPECT_THROW(NoiseSchedule::linear(5, 0.2, 0.1), ConfigError);
  EXPECT_THROW(NoiseSchedule::linear(5, 0.0, 0.1), ConfigError);
  EXPECT_THROW(NoiseSchedule::linear(5, 0.1, 1.0), ConfigError);
  EXPECT_THROW(NoiseSchedule::from_betas({}), ConfigError);
  EXPECT_THROW(NoiseSchedule::from_betas({0.1, std::nan("")}), ConfigError);
}

TEST(Schedule, FromArraysRejectsInconsistentTables) {
  const auto s = test::two_step();
  auto v = [](std::span<const double> x) { return std::vector<double>(x.begin(), x.end()); };
  EXPECT_NO_THROW(NoiseSchedule::from_arrays(v(s.betas()), v(s.alpha_steps()), v(s.alpha_cums()), v(s.beta_tildes())));
  auto bad = v(s.alpha_cums());
  bad[2] += 1e-3;
  EXPECT_THROW(NoiseSchedule::from_arrays(v(s.betas()), v(s.alpha_steps()), bad, v(s.beta_tildes())), Error);
}

// Property: identities hold on random schedules of every length we use.
TEST(Schedule, IdentitiesOnRandomSchedules) {
  Rng rng(7);
  for (int T : {1, 2, 5, 50, 100})
    for (int rep = 0; rep < 25; ++rep) {
      std::vector<double> b(static_cast<std::size_t>(T));
      for (auto& x : b) x = 1e-4 + 0.6 * rng.uniform();
      const auto s = NoiseSchedule::from_betas(b);
      for (int t = 1; t <= T; ++t) {
        EXPECT_NEAR(s.alpha_cum(t), s.alpha_cum(t - 1) * s.alpha_step(t), 1e-12);
        EXPECT_NEAR(s.beta_tilde(t) * (1.0 - s.alpha_cum(t)), (1.0 - s.alpha_cum(t - 1)) * s.beta(t), 1e-12);
        EXPECT_LT(s.alpha_cum(t), s.alpha_cum(t - 1));
        EXPECT_GE(s.beta_tilde(t), 0.0);
        EXPECT_LE(s.beta_tilde(t), s.beta(t));
      }
    }
}

}  // namespace
}  // namespace rdpi
