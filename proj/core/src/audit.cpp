#include "rdpi/audit.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <json.hpp>

#include "rdpi/denoiser.hpp"
#include "rdpi/forward_process.hpp"
#include "rdpi/oracle.hpp"
#include "rdpi/sampler.hpp"
#include "rdpi/schedule.hpp"

namespace rdpi::audit {
namespace {

constexpr int kStepCounts[] = {1, 2, 5, 50, 100};

NoiseSchedule random_schedule(int T, Rng& rng) {
  if (rng.bernoulli(0.5)) {
    double lo = 1e-4 + 0.3 * rng.uniform();
    double hi = lo + (0.5 - lo) * rng.uniform();
    return NoiseSchedule::linear(T, lo, hi);
  }
  std::vector<double> b(static_cast<std::size_t>(T));
  for (auto& x : b) x = 1e-4 + (0.5 - 1e-4) * rng.uniform();
  return NoiseSchedule::from_betas(std::move(b));
}

Check make(std::string name, double residual, double tol, std::string detail = {}) {
  return {std::move(name), residual <= tol, residual, tol, std::move(detail)};
}

Grid uniform_grid(Eigen::Index r, Eigen::Index c, double lo, double hi, Rng& rng) {
  Grid g(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) g(i, j) = lo + (hi - lo) * rng.uniform();
  return g;
}

Mask all_true(Eigen::Index r, Eigen::Index c) { return Mask::Constant(r, c, true); }

}  // namespace

bool Report::all_passed() const {
  return std::all_of(checks.begin(), checks.end(), [](const Check& c) { return c.passed; });
}

std::string Report::to_json() const {
  nlohmann::json j;
  j["all_passed"] = all_passed();
  auto& arr = j["checks"] = nlohmann::json::array();
  for (const auto& c : checks)
    arr.push_back({{"name", c.name}, {"passed", c.passed}, {"residual", c.residual}, {"tolerance", c.tolerance},
                   {"detail", c.detail}});
  auto& tab = j["single_step_vs_marginal"] = nlohmann::json::array();
  for (const auto& r : discrepancy)
    tab.push_back({{"t", r.t},
                   {"c_z0m_chain", r.c_z0m_chain},
                   {"c_z0m_marginal", r.c_z0m_marginal},
                   {"c_z0c_chain", r.c_z0c_chain},
                   {"c_z0c_marginal", r.c_z0c_marginal},
                   {"c_z0c_gap", r.c_z0c_chain - r.c_z0c_marginal},
                   {"variance_chain", r.variance_chain},
                   {"variance_marginal", r.variance_marginal}});
  j["ancestral_stepwise_max_drift"] = {{"gap", ancestral_stepwise_max_drift}, {"t", ancestral_stepwise_drift_step}};
  return j.dump(2);
}

Check schedule_identities(Rng& rng) {
  double worst = 0.0;
  for (int rep = 0; rep < 20; ++rep)
    for (int T : kStepCounts) {
      const auto s = random_schedule(T, rng);
      for (int t = 1; t <= T; ++t) {
        const auto st = s.at(t);
        worst = std::max(worst, std::abs(st.alpha_cum - st.alpha_cum_prev * st.alpha_step) / st.alpha_cum);
        worst = std::max(worst, std::abs(st.beta_tilde * (1.0 - st.alpha_cum) - (1.0 - st.alpha_cum_prev) * st.beta));
        worst = std::max(worst, std::abs(st.alpha_step - (1.0 - st.beta)));
        if (!(st.alpha_cum < st.alpha_cum_prev)) worst = std::max(worst, 1.0);
      }
      if (s.beta_tilde(1) != 0.0 || s.alpha_cum(0) != 1.0) worst = std::max(worst, 1.0);
    }
  return make("schedule_identities", worst, 1e-12);
}

Check substitution_identity(int tuples, Rng& rng) {
  double worst = 0.0;
  const int per = 100;
  int done = 0;
  while (done < tuples) {
    const int T = kStepCounts[rng.uniform_int(1, 4)];
    const auto s = random_schedule(T, rng);
    const int t = rng.uniform_int(1, T);
    const int n = std::min(per, tuples - done);
    const Grid zm = uniform_grid(n, 1, -10, 10, rng), zc = uniform_grid(n, 1, -10, 10, rng),
               eps = uniform_grid(n, 1, -10, 10, rng);
    const Mask m = all_true(n, 1);
    for (PosteriorForm form : {PosteriorForm::stepwise, PosteriorForm::marginal_consistent}) {
      const Grid z = q_sample({zm, m}, {zc, m}, t, eps, s);
      const Grid a = posterior_mean_eps(z, {zc, m}, eps, t, s, form);
      const Grid b = posterior_mean_z0(z, {zm, m}, {zc, m}, t, s, form);
      worst = std::max(worst, (a - b).cwiseAbs().maxCoeff());
    }
    done += n;
  }
  return make("substitution_identity", worst, 1e-10, std::to_string(tuples) + " tuples, both posterior forms");
}

Check conditioning_audit(Rng& rng) {
  double worst = 0.0;
  const Mask m = all_true(1, 1);
  const Grid zero = Grid::Zero(1, 1), one = Grid::Ones(1, 1);
  for (int rep = 0; rep < 20; ++rep)
    for (int T : kStepCounts) {
      const auto s = random_schedule(T, rng);
      for (int t = 2; t <= T; ++t) {
        const auto c = oracle::conditioned_posterior(s, t);
        const double c_zt = posterior_mean_z0(one, {zero, m}, {zero, m}, t, s)(0, 0);
        const double c_zm = posterior_mean_z0(zero, {one, m}, {zero, m}, t, s)(0, 0);
        const double c_zc = posterior_mean_z0(zero, {zero, m}, {one, m}, t, s)(0, 0);
        worst = std::max({worst, std::abs(c.variance - s.beta_tilde(t)), std::abs(c.c_zt - c_zt),
                          std::abs(c.c_z0m - c_zm), std::abs(c.c_z0c - c_zc)});
      }
    }
  return make("conditioning_posterior", worst, 1e-12, "posterior variance and three mean coefficients, t >= 2");
}

Check ddim_identity(Rng& rng) {
  double worst = 0.0;
  for (int rep = 0; rep < 50; ++rep)
    for (int T : kStepCounts) {
      const auto s = random_schedule(T, rng);
      for (int t = 1; t <= T; ++t) {
        const double ap = s.alpha_cum(t - 1), at = s.alpha_cum(t);
        const double d = std::sqrt((1.0 - ap) * rng.uniform());
        const auto c = ddim_coeffs(ap, at, d);
        worst = std::max(worst, std::abs(c.a * c.a * (1.0 - at) + d * d - (1.0 - ap)));
      }
    }
  return make("ddim_identity", worst, 1e-14);
}

Check accelerated_terminal(Rng& rng) {
  double worst = 0.0;
  for (int T : {2, 5, 50}) {
    const auto s = NoiseSchedule::linear(T, 1e-4, 0.2);
    for (int K : {T, std::max(1, T / 5), 1}) {
      const Grid zm = uniform_grid(8, 4, -3, 3, rng), zc = uniform_grid(8, 4, -3, 3, rng);
      const Mask m = all_true(8, 4);
      Grid z = rng.normal_grid(8, 4);
      const auto seq = accelerated_steps(T, K);
      for (std::size_t i = 0; i < seq.size(); ++i) {
        const double at = s.alpha_cum(seq[i]);
        const double ap = i + 1 < seq.size() ? s.alpha_cum(seq[i + 1]) : 1.0;
        const Grid eps = oracle::oracle_eps(z, zm, zc, at);
        z = accelerated_step(z, eps, ap, at, 0.0, Grid::Zero(8, 4), m);
      }
      worst = std::max(worst, (z - (zm + zc)).cwiseAbs().maxCoeff());
    }
  }
  return make("accelerated_terminal_d0", worst, 1e-8, "T in {2, 5, 50}, K in {T, T/5, 1}, eta = 0");
}

Check ancestral_pushforward(int chains, Rng& rng) {
  const auto s = NoiseSchedule::linear(5, 0.05, 0.4);
  const int T = s.steps();
  double mean_err = 0.0, worst_z = 0.0;
  std::string detail;
  for (auto variant : {oracle::Variant::ancestral_stepwise, oracle::Variant::ancestral_consistent}) {
    const PosteriorForm form =
        variant == oracle::Variant::ancestral_stepwise ? PosteriorForm::stepwise : PosteriorForm::marginal_consistent;
    const auto law = oracle::sampler_pushforward_coeffs(s, {variant});
    // Mean path: no injected noise, z_T = 0; columns probe z0m and z0c.
    Grid zm(1, 2), zc(1, 2);
    zm << 1.0, 0.0;
    zc << 0.0, 1.0;
    const Mask m = all_true(1, 2);
    Grid z = Grid::Zero(1, 2);
    for (int t = T; t >= 1; --t) {
      const Grid eps = oracle::oracle_eps(z, zm, zc, s.alpha_cum(t));
      z = ancestral_step(z, {zc, m}, t, eps, s, Grid::Zero(1, 2), form);
      const auto& st = law[static_cast<std::size_t>(T - t + 1)];
      mean_err = std::max({mean_err, std::abs(z(0, 0) - st.c_z0m), std::abs(z(0, 1) - st.c_z0c)});
    }
    // Variances: z0m = z0c = 0, all randomness from z_T and injected noise.
    const Eigen::Index n = chains;
    const Grid zeros = Grid::Zero(n, 1);
    const Mask mn = all_true(n, 1);
    Grid zz = rng.normal_grid(n, 1);
    for (int t = T; t >= 1; --t) {
      const Grid eps = oracle::oracle_eps(zz, zeros, zeros, s.alpha_cum(t));
      zz = ancestral_step(zz, {zeros, mn}, t, eps, s, rng, form);
      const double v = law[static_cast<std::size_t>(T - t + 1)].variance;
      const double mean = zz.mean();
      const double var = (zz.array() - mean).square().sum() / static_cast<double>(n - 1);
      if (v < 1e-20) worst_z = std::max(worst_z, var > 1e-20 ? 1e9 : 0.0);
      else worst_z = std::max(worst_z, std::abs(var - v) / (v * std::sqrt(2.0 / static_cast<double>(n - 1))));
    }
    if (variant == oracle::Variant::ancestral_stepwise) {
      std::ostringstream os;
      os << "stepwise-form terminal coefficients (" << law.back().c_z0m << ", " << law.back().c_z0c << ", "
         << law.back().variance << ")";
      detail = os.str();
    }
  }
  Check c = make("ancestral_pushforward", mean_err, 1e-8, detail);
  c.passed = c.passed && worst_z <= 4.0;
  c.detail += "; worst variance deviation " + std::to_string(worst_z) + " standard errors over " + std::to_string(chains) +
              " chains";
  return c;
}

Check compound_discrepancy(int draws, Rng& rng) {
  const auto s = NoiseSchedule::linear(2, 0.1, 0.2);
  double exact_err = 0.0;
  for (int t = 1; t <= 2; ++t) {
    const auto c = oracle::compound_marginal_coeffs(s, t);
    exact_err = std::max({exact_err, std::abs(c.c_z0m - std::sqrt(s.alpha_cum(t))),
                          std::abs(c.variance - (1.0 - s.alpha_cum(t)))});
  }
  const auto c2 = oracle::compound_marginal_coeffs(s, 2);
  const double closed = std::sqrt(s.alpha_step(1) * s.alpha_step(2)) + std::sqrt(s.alpha_step(2));
  exact_err = std::max(exact_err, std::abs(c2.c_z0c - closed));

  const Eigen::Index n = draws;
  const Mask m = all_true(n, 1);
  const Grid zc = Grid::Ones(n, 1);
  Grid z = Grid::Zero(n, 1);  // z0m = 0 isolates the condition coefficient
  for (int t = 1; t <= 2; ++t) z = q_step_sample(z, {zc, m}, t, rng.normal_grid(n, 1), s);
  const double mean = z.mean();
  const double var = (z.array() - mean).square().sum() / static_cast<double>(n - 1);
  const double z_mean = std::abs(mean - c2.c_z0c) / std::sqrt(c2.variance / static_cast<double>(n));
  const double z_var = std::abs(var - c2.variance) / (c2.variance * std::sqrt(2.0 / static_cast<double>(n - 1)));
  std::ostringstream os;
  os << "c_z0c(2) chain " << c2.c_z0c << " vs marginal " << std::sqrt(s.alpha_cum(2)) << "; Monte Carlo mean " << mean
     << " (" << z_mean << " SE), variance " << var << " (" << z_var << " SE)";
  Check c = make("single_step_vs_marginal", exact_err, 1e-12, os.str());
  c.passed = c.passed && z_mean <= 4.0 && z_var <= 4.0;
  return c;
}

Check gradient_check(Rng& rng) {
  DenoiserConfig cfg{8, 3, 2, 4, 3, 5};
  const auto params = DenoiserParams::init(cfg, rng);
  Graph g{Eigen::MatrixXd::Zero(3, 3)};
  g.adjacency(0, 1) = g.adjacency(1, 0) = 1.0;
  g.adjacency(1, 2) = g.adjacency(2, 1) = 0.5;
  std::vector<DenoiserExample> batch;
  for (int b = 0; b < 2; ++b) {
    DenoiserExample ex;
    ex.z_t = rng.normal_grid(4, 3);
    ex.cond = rng.normal_grid(4, 3);
    ex.eps = rng.normal_grid(4, 3);
    ex.t = rng.uniform_int(1, 5);
    ex.target = Mask::Constant(4, 3, false);
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 3; ++j) ex.target(i, j) = rng.bernoulli(0.6);
    ex.target(0, 0) = true;
    batch.push_back(std::move(ex));
  }
  const auto rep = oracle::finite_diff_check(params, batch, g, 1e-3);
  std::string worst_name;
  for (const auto& [k, v] : rep.per_tensor)
    if (v == rep.max_rel_error) worst_name = k;
  return make("denoiser_gradients", rep.max_rel_error, 1e-4,
              std::to_string(rep.parameters) + " parameters, worst tensor " + worst_name);
}

Check boundary_t1(Rng& rng) {
  double worst = 0.0;
  for (int T : kStepCounts) {
    const auto s = random_schedule(T, rng);
    const Grid zt = uniform_grid(5, 3, -10, 10, rng), zm = uniform_grid(5, 3, -10, 10, rng),
               zc = uniform_grid(5, 3, -10, 10, rng);
    const Mask m = all_true(5, 3);
    for (PosteriorForm form : {PosteriorForm::stepwise, PosteriorForm::marginal_consistent}) {
      const Grid mu = posterior_mean_z0(zt, {zm, m}, {zc, m}, 1, s, form);
      worst = std::max(worst, (mu - (zm + zc)).cwiseAbs().maxCoeff());
    }
  }
  return make("posterior_t1_boundary", worst, 1e-10);
}

Check unconditional_reduction(Rng& rng) {
  double worst = 0.0;
  for (int T : kStepCounts) {
    const auto s = random_schedule(T, rng);
    const Mask m = all_true(1, 1);
    const Grid zero = Grid::Zero(1, 1);
    for (int t = 1; t <= T; ++t) {
      Grid xt(1, 1), x0(1, 1), e(1, 1);
      xt(0, 0) = -5 + 10 * rng.uniform();
      x0(0, 0) = -5 + 10 * rng.uniform();
      e(0, 0) = -3 + 6 * rng.uniform();
      worst = std::max(worst, std::abs(posterior_mean_z0(xt, {x0, m}, {zero, m}, t, s)(0, 0) -
                                       oracle::ddpm_posterior_mean(s, t, xt(0, 0), x0(0, 0))));
      worst = std::max(worst, std::abs(posterior_mean_eps(xt, {zero, m}, e, t, s)(0, 0) -
                                       oracle::ddpm_eps_mean(s, t, xt(0, 0), e(0, 0))));
      // Accelerated step with the full schedule and default noise is the ancestral step.
      const double ap = s.alpha_cum(t - 1), at = s.alpha_cum(t);
      const Grid acc = accelerated_step(xt, e, ap, at, default_ddim_sigma(ap, at), zero, m);
      const Grid anc = ancestral_step(xt, {zero, m}, t, e, s, zero, PosteriorForm::marginal_consistent);
      worst = std::max(worst, std::abs(acc(0, 0) - anc(0, 0)));
    }
  }
  return make("unconditional_reduction", worst, 1e-10, "z0c = 0 against plain DDPM formulas");
}

Check elbo_terms(Rng& rng) {
  const auto s = NoiseSchedule::linear(2, 0.1, 0.2);
  const Mask m = all_true(1, 1);
  Grid zm(1, 1), zc(1, 1);
  zm(0, 0) = 0.25;
  zc(0, 0) = 0.75;
  // The oracle predictor recovers the exact noise, so every step KL vanishes.
  double eps_store = 0.0;
  const auto s50 = NoiseSchedule::linear(50, 1e-4, 0.2);
  const Grid zm3 = uniform_grid(3, 2, -2, 2, rng), zc3 = uniform_grid(3, 2, -2, 2, rng);
  const Mask m3 = all_true(3, 2);
  const EpsPredictor oracle_pred = [&](const Grid& z, int t) { return oracle::oracle_eps(z, zm3, zc3, s50.alpha_cum(t)); };
  const auto d = elbo_diagnostics({zm3, m3}, {zc3, m3}, oracle_pred, s50, 2, rng);
  for (double kl : d.step_kl) eps_store = std::max(eps_store, std::abs(kl));
  const EpsPredictor dummy = [](const Grid& z, int) { return Grid::Zero(z.rows(), z.cols()); };
  const auto p = elbo_diagnostics({zm, m}, {zc, m}, dummy, s, 1, rng);
  const double expected = 0.5 * (0.28 + 0.72 - 1.0 - std::log(0.28));
  const double prior_err = std::abs(p.prior_kl - expected);
  std::ostringstream os;
  os << "max oracle step KL " << eps_store << "; prior KL " << p.prior_kl << " vs " << expected;
  return make("elbo_terms", std::max(eps_store, prior_err), 1e-9, os.str());
}

Check accelerated_marginals(Rng& rng) {
  double worst = 0.0;
  for (int T : {2, 5, 50}) {
    const auto s = random_schedule(T, rng);
    for (int K : {T, std::max(1, T / 3)})
      for (double eta : {0.0, 0.5, 1.0}) {
        oracle::PushforwardOptions o{oracle::Variant::accelerated, K, eta, true};
        const auto law = oracle::sampler_pushforward_coeffs(s, o);
        const auto seq = accelerated_steps(T, K);
        for (std::size_t i = 0; i < seq.size(); ++i) {
          const double ap = i + 1 < seq.size() ? s.alpha_cum(seq[i + 1]) : 1.0;
          const auto& st = law[i + 1];
          worst = std::max({worst, std::abs(st.c_z0m - std::sqrt(ap)), std::abs(st.c_z0c - std::sqrt(ap)),
                            std::abs(st.variance - (1.0 - ap))});
        }
        oracle::PushforwardOptions from_noise{oracle::Variant::accelerated, K, eta, false};
        const auto term = oracle::sampler_pushforward_coeffs(s, from_noise).back();
        worst = std::max({worst, std::abs(term.c_z0m - 1.0), std::abs(term.c_z0c - 1.0), std::abs(term.variance)});
      }
  }
  return make("accelerated_marginals", worst, 1e-8, "per-step law from the marginal; terminal (1, 1, 0) from noise");
}

std::vector<DiscrepancyRow> discrepancy_table(int T, double beta_min, double beta_max, const std::vector<int>& steps) {
  const auto s = NoiseSchedule::linear(T, beta_min, beta_max);
  std::vector<DiscrepancyRow> out;
  for (int t : steps) {
    if (t < 1 || t > T) continue;
    const auto c = oracle::compound_marginal_coeffs(s, t);
    out.push_back({t, c.c_z0m, std::sqrt(s.alpha_cum(t)), c.c_z0c, std::sqrt(s.alpha_cum(t)), c.variance,
                   1.0 - s.alpha_cum(t)});
  }
  return out;
}

Report run(const Options& o) {
  Rng root(o.seed);
  Report r;
  auto next = [&](std::uint64_t k) { return root.derive(k); };
  {
    Rng g = next(1);
    r.checks.push_back(schedule_identities(g));
  }
  {
    Rng g = next(2);
    r.checks.push_back(substitution_identity(o.substitution_tuples, g));
  }
  {
    Rng g = next(3);
    r.checks.push_back(conditioning_audit(g));
  }
  {
    Rng g = next(4);
    r.checks.push_back(boundary_t1(g));
  }
  {
    Rng g = next(5);
    r.checks.push_back(ddim_identity(g));
  }
  {
    Rng g = next(6);
    r.checks.push_back(accelerated_terminal(g));
  }
  {
    Rng g = next(7);
    r.checks.push_back(accelerated_marginals(g));
  }
  {
    Rng g = next(8);
    r.checks.push_back(ancestral_pushforward(o.pushforward_chains, g));
  }
  {
    Rng g = next(9);
    r.checks.push_back(compound_discrepancy(o.mc_draws, g));
  }
  {
    Rng g = next(10);
    r.checks.push_back(unconditional_reduction(g));
  }
  {
    Rng g = next(11);
    r.checks.push_back(elbo_terms(g));
  }
  {
    Rng g = next(12);
    r.checks.push_back(gradient_check(g));
  }
  r.discrepancy = discrepancy_table(50, 1e-4, 0.2, {1, 2, 3, 5, 10, 20, 30, 40, 50});
  const auto law = oracle::sampler_pushforward_coeffs(NoiseSchedule::linear(50, 1e-4, 0.2), {oracle::Variant::ancestral_stepwise});
  for (std::size_t i = 1; i + 1 < law.size(); ++i) {
    const double gap = law[i].c_z0c - law[i].c_z0m;
    if (std::abs(gap) > std::abs(r.ancestral_stepwise_max_drift)) {
      r.ancestral_stepwise_max_drift = gap;
      r.ancestral_stepwise_drift_step = 50 - static_cast<int>(i);
    }
  }
  return r;
}

}  // namespace rdpi::audit
