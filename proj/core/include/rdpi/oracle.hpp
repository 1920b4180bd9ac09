#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "rdpi/data.hpp"
#include "rdpi/denoiser.hpp"
#include "rdpi/schedule.hpp"

namespace rdpi::oracle {

/// Law of a chain state written as c_z0m * z0m + c_z0c * z0c + N(0, variance).
struct AffineGaussianState {
  double c_z0m = 0.0;
  double c_z0c = 0.0;
  double variance = 0.0;
};

/// Cumulative products recomputed from the betas alone (index t holds alpha_t,
/// alpha_0 = 1).
std::vector<double> cumulative_alphas(const NoiseSchedule& sched);

/// Exact marginal of t single steps z_t = sqrt(1-b_t)(z_{t-1} + z0c) + sqrt(b_t) eps
/// started from z_0 = z0m.
AffineGaussianState compound_marginal_coeffs(const NoiseSchedule& sched, int t);

/// Posterior of x ~ N(m, v) after observing y | x ~ N(k x + c, w):
/// mean = coef_prior_mean * m + coef_observation * y + coef_offset * c.
struct LinearGaussianPosterior {
  double variance = 0.0;
  double coef_prior_mean = 0.0;
  double coef_observation = 0.0;
  double coef_offset = 0.0;

  [[nodiscard]] double mean(double m, double y, double c) const {
    return coef_prior_mean * m + coef_observation * y + coef_offset * c;
  }
};

/// Throws DomainError unless v > 0 and w > 0.
LinearGaussianPosterior gaussian_condition(double prior_var, double k, double obs_var);

/// Posterior of z_{t-1} given (z_t, z0m, z0c) from the closed-form prior
/// N(sqrt(alpha_{t-1})(z0m + z0c), 1 - alpha_{t-1}) and the single-step
/// likelihood, via gaussian_condition. t = 1 returns the degenerate limit
/// (0, 1, 1, variance 0).
struct PosteriorCoeffs {
  double c_zt = 0.0;
  double c_z0m = 0.0;
  double c_z0c = 0.0;
  double variance = 0.0;
};
PosteriorCoeffs conditioned_posterior(const NoiseSchedule& sched, int t);

/// Plain (unconditioned) DDPM posterior mean of x_{t-1} given (x_t, x_0).
double ddpm_posterior_mean(const NoiseSchedule& sched, int t, double x_t, double x0);
/// Plain DDPM reverse mean from a noise estimate.
double ddpm_eps_mean(const NoiseSchedule& sched, int t, double x_t, double eps_hat);

enum class Variant { ancestral_stepwise, ancestral_consistent, accelerated };

struct PushforwardOptions {
  Variant variant = Variant::ancestral_stepwise;
  int accelerate_steps = 0;  // accelerated only; 0 means T
  double eta = 1.0;          // accelerated noise multiplier on the default scale
  bool start_at_marginal = false;  // start from the t = T marginal instead of N(0, 1)
};

/// Exact per-step law of the sampler chain under the oracle predictor
/// eps*(z, t) = (z - sqrt(alpha_t)(z0m + z0c)) / sqrt(1 - alpha_t).
/// Element 0 is the starting state, the last element the terminal state.
std::vector<AffineGaussianState> sampler_pushforward_coeffs(const NoiseSchedule& sched, const PushforwardOptions& options);

/// Oracle predictor evaluated cellwise on grids.
Grid oracle_eps(const Grid& z_t, const Grid& z0m, const Grid& z0c, double alpha_t);

struct FiniteDiffReport {
  double max_rel_error = 0.0;                   // max over tensors
  std::map<std::string, double> per_tensor;     // |g_a - g_n|_inf / |g_a|_inf
  double max_abs_error = 0.0;
  std::size_t parameters = 0;
};

/// Central differences of the denoiser loss for every parameter entry,
/// compared with loss_and_grads.
FiniteDiffReport finite_diff_check(const DenoiserParams& params, std::span<const DenoiserExample> batch,
                                   const Graph& graph, double step);

}  // namespace rdpi::oracle
