#include "rdpi/forward_process.hpp"

#include <cmath>
#include <numbers>

#include "rdpi/error.hpp"

namespace rdpi {

namespace {

void require_same_shape(const Grid& a, const Grid& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw DimensionError(std::string(what) + ": grid shapes disagree");
}

void require_same_mask(const Mask& a, const Mask& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw DimensionError(std::string(what) + ": mask shapes disagree");
  if ((a != b).any()) throw DimensionError(std::string(what) + ": target masks disagree");
}

Grid on_target(const Grid& g, const Mask& target) { return target.select(g.array(), 0.0).matrix(); }

}  // namespace

Grid q_sample(const ResidualGrid& z0m, const ConditionGrid& z0c, int t, const Grid& eps,
              const NoiseSchedule& sched) {
  require_same_shape(z0m.values, z0c.values, "q_sample");
  require_same_shape(z0m.values, eps, "q_sample");
  require_same_mask(z0m.target, z0c.target, "q_sample");
  const auto s = sched.at(t);
  const double signal = std::sqrt(s.alpha_cum);
  const double noise = std::sqrt(1.0 - s.alpha_cum);
  Grid z = signal * z0m.values + signal * z0c.values + noise * eps;
  return on_target(z, z0m.target);
}

Grid q_step_sample(const Grid& z_prev, const ConditionGrid& z0c, int t, const Grid& eps,
                   const NoiseSchedule& sched) {
  require_same_shape(z_prev, z0c.values, "q_step_sample");
  require_same_shape(z_prev, eps, "q_step_sample");
  const auto s = sched.at(t);
  const double keep = std::sqrt(s.alpha_step);
  Grid z = keep * z_prev + keep * z0c.values + std::sqrt(s.beta) * eps;
  return on_target(z, z0c.target);
}

Grid posterior_mean_z0(const Grid& z_t, const ResidualGrid& z0m, const ConditionGrid& z0c, int t,
                       const NoiseSchedule& sched, PosteriorForm form) {
  require_same_shape(z_t, z0m.values, "posterior_mean_z0");
  require_same_shape(z_t, z0c.values, "posterior_mean_z0");
  const auto s = sched.at(t);
  const double denom = 1.0 - s.alpha_cum;
  const double c_zt = std::sqrt(s.alpha_step) * (1.0 - s.alpha_cum_prev) / denom;
  const double c_z0m = std::sqrt(s.alpha_cum_prev) * s.beta / denom;
  double c_z0c = (std::sqrt(s.alpha_cum_prev) * s.beta - s.alpha_step * (1.0 - s.alpha_cum_prev)) / denom;
  if (form == PosteriorForm::marginal_consistent) c_z0c = c_z0m;
  return c_zt * z_t + c_z0m * z0m.values + c_z0c * z0c.values;
}

Grid posterior_mean_eps(const Grid& z_t, const ConditionGrid& z0c, const Grid& eps_hat, int t,
                        const NoiseSchedule& sched, PosteriorForm form) {
  require_same_shape(z_t, z0c.values, "posterior_mean_eps");
  require_same_shape(z_t, eps_hat, "posterior_mean_eps");
  const auto s = sched.at(t);
  const double root = std::sqrt(s.alpha_step);
  const double c_eps = (1.0 - s.alpha_step) / std::sqrt(1.0 - s.alpha_cum);
  if (form == PosteriorForm::marginal_consistent) return (z_t - c_eps * eps_hat) / root;
  const double c_cond = s.alpha_step * root * (1.0 - s.alpha_cum_prev) / (1.0 - s.alpha_cum);
  return (z_t - c_cond * z0c.values - c_eps * eps_hat) / root;
}

double gaussian_kl_shared_variance(const Grid& m1, const Grid& m2, double variance, const Mask& mask) {
  require_same_shape(m1, m2, "gaussian_kl");
  if (!(variance > 0.0)) throw DomainError("gaussian_kl: variance must be positive");
  const Grid d = m1 - m2;
  return mask.select(d.array().square(), 0.0).sum() / (2.0 * variance);
}

ElboDiagnostics elbo_diagnostics(const ResidualGrid& z0m, const ConditionGrid& z0c,
                                 const EpsPredictor& predictor, const NoiseSchedule& sched,
                                 int mc_draws, Rng& rng, PosteriorForm form) {
  if (mc_draws < 1) throw ConfigError("elbo_diagnostics: mc_draws must be >= 1");
  require_same_mask(z0m.target, z0c.target, "elbo_diagnostics");
  const int T = sched.steps();
  const Mask& target = z0m.target;
  const auto rows = z0m.values.rows();
  const auto cols = z0m.values.cols();

  ElboDiagnostics out;
  out.step_kl.assign(static_cast<std::size_t>(std::max(0, T - 1)), 0.0);

  // t = 1 has beta_tilde = 0; it is covered by the reconstruction term.
  for (int t = 2; t <= T; ++t) {
    double acc = 0.0;
    const double var = sched.beta_tilde(t);
    for (int k = 0; k < mc_draws; ++k) {
      const Grid eps = rng.normal_grid(rows, cols);
      const Grid z_t = q_sample(z0m, z0c, t, eps, sched);
      const Grid mu_true = posterior_mean_z0(z_t, z0m, z0c, t, sched, form);
      const Grid mu_model = posterior_mean_eps(z_t, z0c, predictor(z_t, t), t, sched, form);
      acc += gaussian_kl_shared_variance(mu_true, mu_model, var, target);
    }
    out.step_kl[static_cast<std::size_t>(t - 2)] = acc / mc_draws;
  }

  {
    const double a = sched.alpha_cum(T);
    const double v = 1.0 - a;
    const Grid mean = std::sqrt(a) * (z0m.values + z0c.values);
    out.prior_kl = target.select(0.5 * (v + mean.array().square() - 1.0 - std::log(v)), 0.0).sum();
  }

  {
    const double var = sched.beta(1);
    const Grid x0 = z0m.values + z0c.values;
    double acc = 0.0;
    for (int k = 0; k < mc_draws; ++k) {
      const Grid eps = rng.normal_grid(rows, cols);
      const Grid z1 = q_sample(z0m, z0c, 1, eps, sched);
      const Grid mu = posterior_mean_eps(z1, z0c, predictor(z1, 1), 1, sched, form);
      const Grid d = x0 - mu;
      acc += target
                 .select(-0.5 * d.array().square() / var - 0.5 * std::log(2.0 * std::numbers::pi * var), 0.0)
                 .sum();
    }
    out.reconstruction = acc / mc_draws;
  }
  return out;
}

}  // namespace rdpi
