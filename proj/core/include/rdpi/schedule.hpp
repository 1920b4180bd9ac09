#pragma once

#include <span>
#include <vector>

namespace rdpi {

/// Diffusion variance schedule over steps 1..T.
///
/// Conventions: `alpha_step(t) = 1 - beta(t)` is the single-step retention,
/// `alpha_cum(t)` the running product with `alpha_cum(0) = 1`, and
/// `beta_tilde(t) = (1 - alpha_cum(t-1)) * beta(t) / (1 - alpha_cum(t))` the
/// posterior variance (zero at t = 1). Immutable once built.
class NoiseSchedule {
 public:
  struct Step {
    double beta;
    double alpha_step;
    double alpha_cum_prev;
    double alpha_cum;
    double beta_tilde;
  };

  /// beta linear from beta_min (t=1) to beta_max (t=T).
  static NoiseSchedule linear(int steps, double beta_min, double beta_max);
  static NoiseSchedule from_betas(std::vector<double> betas);
  /// Rebuild from stored arrays (checkpoints). Arrays are taken verbatim after
  /// a consistency check against the betas.
  static NoiseSchedule from_arrays(std::vector<double> betas, std::vector<double> alpha_step,
                                   std::vector<double> alpha_cum, std::vector<double> beta_tilde);

  [[nodiscard]] int steps() const noexcept { return static_cast<int>(beta_.size()); }

  /// Scalars at step t, 1 <= t <= T. Throws IndexError otherwise.
  [[nodiscard]] Step at(int t) const;

  [[nodiscard]] double beta(int t) const { return at(t).beta; }
  [[nodiscard]] double alpha_step(int t) const { return at(t).alpha_step; }
  /// Valid for 0 <= t <= T.
  [[nodiscard]] double alpha_cum(int t) const;
  [[nodiscard]] double beta_tilde(int t) const { return at(t).beta_tilde; }

  // Index i holds step i+1 (alpha_cum: index i holds alpha_i, size T+1).
  [[nodiscard]] std::span<const double> betas() const noexcept { return beta_; }
  [[nodiscard]] std::span<const double> alpha_steps() const noexcept { return alpha_step_; }
  [[nodiscard]] std::span<const double> alpha_cums() const noexcept { return alpha_cum_; }
  [[nodiscard]] std::span<const double> beta_tildes() const noexcept { return beta_tilde_; }

 private:
  NoiseSchedule() = default;

  std::vector<double> beta_;
  std::vector<double> alpha_step_;
  std::vector<double> alpha_cum_;
  std::vector<double> beta_tilde_;
};

}  // namespace rdpi
