#pragma once

#include <functional>
#include <vector>

#include "rdpi/grid.hpp"
#include "rdpi/rng.hpp"
#include "rdpi/schedule.hpp"

namespace rdpi {

/// Residual diffusion target z0m = f(x^c) - x^m on target cells, zero elsewhere.
struct ResidualGrid {
  Grid values;
  Mask target;
};

/// Observation-derived condition z0c on target cells, zero elsewhere.
struct ConditionGrid {
  Grid values;
  Mask target;
};

/// Which posterior mean the reverse step uses.
///
/// `stepwise` is the closed form obtained by combining the single-step transition
/// (which adds the condition at every step) with the closed-form marginal; its
/// ε-form subtracts an extra condition term. `marginal_consistent` is the
/// posterior of the Markov chain whose marginals are exactly
/// N(sqrt(alpha_t)(z0m + z0c), (1 - alpha_t) I); it differs from `stepwise` only
/// in the coefficient on z0c.
enum class PosteriorForm { stepwise, marginal_consistent };

/// z_t = sqrt(a_t) z0m + sqrt(a_t) z0c + sqrt(1 - a_t) eps on target cells.
Grid q_sample(const ResidualGrid& z0m, const ConditionGrid& z0c, int t, const Grid& eps,
              const NoiseSchedule& sched);

/// One transition of the conditioned chain:
/// z_t = sqrt(1 - b_t) z_prev + sqrt(1 - b_t) z0c + sqrt(b_t) eps.
/// Kept for auditing only; its compounded marginal does not match q_sample.
Grid q_step_sample(const Grid& z_prev, const ConditionGrid& z0c, int t, const Grid& eps,
                   const NoiseSchedule& sched);

/// Posterior mean of z_{t-1} given (z_t, z0m, z0c).
Grid posterior_mean_z0(const Grid& z_t, const ResidualGrid& z0m, const ConditionGrid& z0c, int t,
                       const NoiseSchedule& sched, PosteriorForm form = PosteriorForm::stepwise);

/// Same mean rewritten in terms of a noise estimate eps_hat.
Grid posterior_mean_eps(const Grid& z_t, const ConditionGrid& z0c, const Grid& eps_hat, int t,
                        const NoiseSchedule& sched, PosteriorForm form = PosteriorForm::stepwise);

/// KL(N(m1, s2 I) || N(m2, s2 I)) summed over cells of `mask`.
double gaussian_kl_shared_variance(const Grid& m1, const Grid& m2, double variance, const Mask& mask);

/// Predictor of eps given (z_t, t); the condition is bound by the caller.
using EpsPredictor = std::function<Grid(const Grid& z_t, int t)>;

struct ElboDiagnostics {
  /// Index t-2 holds the Monte-Carlo KL estimate for step t (t = 2..T).
  std::vector<double> step_kl;
  /// KL(q(z_T | z0m, z0c) || N(0, I)), closed form, summed over target cells.
  double prior_kl = 0.0;
  /// E_q[log N(z0m + z0c; mu_theta(z_1), beta_1)], summed over target cells.
  double reconstruction = 0.0;
};

/// Per-step terms of the variational bound for a given predictor. Diagnostics
/// only; training uses the simplified noise-matching loss.
ElboDiagnostics elbo_diagnostics(const ResidualGrid& z0m, const ConditionGrid& z0c,
                                 const EpsPredictor& predictor, const NoiseSchedule& sched,
                                 int mc_draws, Rng& rng, PosteriorForm form = PosteriorForm::stepwise);

}  // namespace rdpi
