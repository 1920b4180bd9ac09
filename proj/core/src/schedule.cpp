#include "rdpi/schedule.hpp"

#include <cmath>
#include <string>

#include "rdpi/error.hpp"

namespace rdpi {

NoiseSchedule NoiseSchedule::linear(int steps, double beta_min, double beta_max) {
  if (steps < 1) throw ConfigError("schedule: step count must be >= 1, got " + std::to_string(steps));
  if (!(beta_min > 0.0) || !(beta_min <= beta_max) || !(beta_max < 1.0))
    throw ConfigError("schedule: need 0 < beta_min <= beta_max < 1");
  std::vector<double> betas(static_cast<std::size_t>(steps));
  if (steps == 1) {
    betas[0] = beta_min;
  } else {
    for (int t = 1; t <= steps; ++t) {
      const double frac = static_cast<double>(t - 1) / static_cast<double>(steps - 1);
      betas[static_cast<std::size_t>(t - 1)] = beta_min + frac * (beta_max - beta_min);
    }
    betas.back() = beta_max;
  }
  return from_betas(std::move(betas));
}

NoiseSchedule NoiseSchedule::from_betas(std::vector<double> betas) {
  if (betas.empty()) throw ConfigError("schedule: empty beta sequence");
  for (double b : betas)
    if (!(b > 0.0 && b < 1.0)) throw ConfigError("schedule: every beta must lie in (0, 1)");

  NoiseSchedule s;
  const std::size_t T = betas.size();
  s.beta_ = std::move(betas);
  s.alpha_step_.resize(T);
  s.alpha_cum_.resize(T + 1);
  s.beta_tilde_.resize(T);
  s.alpha_cum_[0] = 1.0;
  for (std::size_t i = 0; i < T; ++i) {
    s.alpha_step_[i] = 1.0 - s.beta_[i];
    s.alpha_cum_[i + 1] = s.alpha_cum_[i] * s.alpha_step_[i];
  }
  for (std::size_t i = 0; i < T; ++i) {
    s.beta_tilde_[i] = (1.0 - s.alpha_cum_[i]) * s.beta_[i] / (1.0 - s.alpha_cum_[i + 1]);
  }
  return s;
}

NoiseSchedule NoiseSchedule::from_arrays(std::vector<double> betas, std::vector<double> alpha_step,
                                         std::vector<double> alpha_cum,
                                         std::vector<double> beta_tilde) {
  NoiseSchedule ref = from_betas(betas);
  const std::size_t T = ref.beta_.size();
  if (alpha_step.size() != T || alpha_cum.size() != T + 1 || beta_tilde.size() != T)
    throw DataError("schedule: stored array lengths disagree");
  auto close = [](double a, double b) { return std::abs(a - b) <= 1e-12 * std::max(1.0, std::abs(b)); };
  for (std::size_t i = 0; i < T; ++i) {
    if (!close(alpha_step[i], ref.alpha_step_[i]) || !close(alpha_cum[i + 1], ref.alpha_cum_[i + 1]) ||
        !close(beta_tilde[i], ref.beta_tilde_[i]))
      throw DataError("schedule: stored arrays inconsistent with betas");
  }
  if (alpha_cum[0] != 1.0) throw DataError("schedule: alpha_cum[0] must be 1");
  NoiseSchedule s;
  s.beta_ = std::move(betas);
  s.alpha_step_ = std::move(alpha_step);
  s.alpha_cum_ = std::move(alpha_cum);
  s.beta_tilde_ = std::move(beta_tilde);
  return s;
}

NoiseSchedule::Step NoiseSchedule::at(int t) const {
  if (t < 1 || t > steps())
    throw IndexError("schedule: step " + std::to_string(t) + " outside [1, " + std::to_string(steps()) + "]");
  const auto i = static_cast<std::size_t>(t - 1);
  return Step{beta_[i], alpha_step_[i], alpha_cum_[i], alpha_cum_[i + 1], beta_tilde_[i]};
}

double NoiseSchedule::alpha_cum(int t) const {
  if (t < 0 || t > steps())
    throw IndexError("schedule: step " + std::to_string(t) + " outside [0, " + std::to_string(steps()) + "]");
  return alpha_cum_[static_cast<std::size_t>(t)];
}

}  // namespace rdpi
