#include "rdpi/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "rdpi/error.hpp"
#include "rdpi/optim.hpp"

namespace rdpi::oracle {

std::vector<double> cumulative_alphas(const NoiseSchedule& sched) {
  const auto betas = sched.betas();
  std::vector<double> a(betas.size() + 1, 1.0);
  for (std::size_t i = 0; i < betas.size(); ++i) a[i + 1] = a[i] * (1.0 - betas[i]);
  return a;
}

AffineGaussianState compound_marginal_coeffs(const NoiseSchedule& sched, int t) {
  if (t < 1 || t > sched.steps()) throw IndexError("compound_marginal_coeffs: step out of range");
  const auto betas = sched.betas();
  AffineGaussianState s{1.0, 0.0, 0.0};
  for (int k = 1; k <= t; ++k) {
    const double b = betas[static_cast<std::size_t>(k - 1)];
    const double r = std::sqrt(1.0 - b);
    s.c_z0m = r * s.c_z0m;
    s.c_z0c = r * (s.c_z0c + 1.0);
    s.variance = (1.0 - b) * s.variance + b;
  }
  return s;
}

LinearGaussianPosterior gaussian_condition(double prior_var, double k, double obs_var) {
  if (!(prior_var > 0.0) || !(obs_var > 0.0)) throw DomainError("gaussian_condition: variances must be positive");
  LinearGaussianPosterior p;
  p.variance = 1.0 / (1.0 / prior_var + k * k / obs_var);
  p.coef_prior_mean = p.variance / prior_var;
  p.coef_observation = p.variance * k / obs_var;
  p.coef_offset = -p.coef_observation;
  return p;
}

PosteriorCoeffs conditioned_posterior(const NoiseSchedule& sched, int t) {
  if (t < 1 || t > sched.steps()) throw IndexError("conditioned_posterior: step out of range");
  const auto a = cumulative_alphas(sched);
  const double beta = sched.betas()[static_cast<std::size_t>(t - 1)];
  const double a_prev = a[static_cast<std::size_t>(t - 1)];
  if (t == 1) return {0.0, 1.0, 1.0, 0.0};
  // prior: z_{t-1} ~ N(sqrt(a_prev)(z0m + z0c), 1 - a_prev)
  // likelihood: z_t | z_{t-1} ~ N(k z_{t-1} + k z0c, beta), k = sqrt(1 - beta)
  const double k = std::sqrt(1.0 - beta);
  const auto post = gaussian_condition(1.0 - a_prev, k, beta);
  PosteriorCoeffs c;
  c.variance = post.variance;
  c.c_zt = post.coef_observation;
  c.c_z0m = post.coef_prior_mean * std::sqrt(a_prev);
  c.c_z0c = post.coef_prior_mean * std::sqrt(a_prev) + post.coef_offset * k;
  return c;
}

double ddpm_posterior_mean(const NoiseSchedule& sched, int t, double x_t, double x0) {
  const auto a = cumulative_alphas(sched);
  const double b = sched.betas()[static_cast<std::size_t>(t - 1)];
  const double ap = a[static_cast<std::size_t>(t - 1)], at = a[static_cast<std::size_t>(t)];
  return std::sqrt(ap) * b / (1.0 - at) * x0 + std::sqrt(1.0 - b) * (1.0 - ap) / (1.0 - at) * x_t;
}

double ddpm_eps_mean(const NoiseSchedule& sched, int t, double x_t, double eps_hat) {
  const auto a = cumulative_alphas(sched);
  const double b = sched.betas()[static_cast<std::size_t>(t - 1)];
  const double at = a[static_cast<std::size_t>(t)];
  return (x_t - b / std::sqrt(1.0 - at) * eps_hat) / std::sqrt(1.0 - b);
}

std::vector<AffineGaussianState> sampler_pushforward_coeffs(const NoiseSchedule& sched, const PushforwardOptions& o) {
  const int T = sched.steps();
  const auto a = cumulative_alphas(sched);
  const auto betas = sched.betas();
  std::vector<AffineGaussianState> out;
  AffineGaussianState s{0.0, 0.0, 1.0};
  if (o.start_at_marginal) s = {std::sqrt(a[static_cast<std::size_t>(T)]), std::sqrt(a[static_cast<std::size_t>(T)]), 1.0 - a[static_cast<std::size_t>(T)]};
  out.push_back(s);

  if (o.variant != Variant::accelerated) {
    for (int t = T; t >= 1; --t) {
      const double b = betas[static_cast<std::size_t>(t - 1)];
      const double ab = 1.0 - b;
      const double at = a[static_cast<std::size_t>(t)], ap = a[static_cast<std::size_t>(t - 1)];
      const double root = std::sqrt(ab);
      // eps* = (z - sqrt(at) y) / sqrt(1 - at); mean = (z - c_cond z0c - c_eps eps*) / root
      const double g = b / (1.0 - at);
      const double keep = ab * (1.0 - ap) / (1.0 - at);  // 1 - g, exactly 0 at t = 1
      const double c_cond = o.variant == Variant::ancestral_stepwise ? ab * root * (1.0 - ap) / (1.0 - at) : 0.0;
      const double sigma2 = t > 1 ? (1.0 - ap) * b / (1.0 - at) : 0.0;
      AffineGaussianState n;
      n.c_z0m = (keep * s.c_z0m + g * std::sqrt(at)) / root;
      n.c_z0c = (keep * s.c_z0c + g * std::sqrt(at) - c_cond) / root;
      n.variance = keep * keep * s.variance / ab + sigma2;
      s = n;
      out.push_back(s);
    }
    return out;
  }

  const int K = o.accelerate_steps == 0 ? T : o.accelerate_steps;
  if (K < 1 || K > T) throw ConfigError("pushforward: accelerate steps out of range");
  std::vector<int> seq;
  if (K == 1) seq.push_back(T);
  else
    for (int k = K - 1; k >= 0; --k)
      seq.push_back(1 + static_cast<int>(std::lround(static_cast<double>(T - 1) * k / (K - 1))));
  for (std::size_t i = 0; i < seq.size(); ++i) {
    const double at = a[static_cast<std::size_t>(seq[i])];
    const double ap = i + 1 < seq.size() ? a[static_cast<std::size_t>(seq[i + 1])] : 1.0;
    const bool last = i + 1 == seq.size();
    double d2 = 0.0;
    if (!last) d2 = o.eta * o.eta * (1.0 - ap) / (1.0 - at) * (1.0 - at / ap);
    const double keep = std::sqrt(ap / at);
    const double c_eps = std::sqrt(std::max(0.0, 1.0 - ap - d2)) - std::sqrt(ap * (1.0 - at) / at);
    // z' = keep z + c_eps (z - sqrt(at) y) / sqrt(1 - at) + d eps'
    const double h = keep + c_eps / std::sqrt(1.0 - at);
    const double cy = -c_eps * std::sqrt(at) / std::sqrt(1.0 - at);
    AffineGaussianState n;
    n.c_z0m = h * s.c_z0m + cy;
    n.c_z0c = h * s.c_z0c + cy;
    n.variance = h * h * s.variance + d2;
    s = n;
    out.push_back(s);
  }
  return out;
}

Grid oracle_eps(const Grid& z_t, const Grid& z0m, const Grid& z0c, double alpha_t) {
  return (z_t - std::sqrt(alpha_t) * (z0m + z0c)) / std::sqrt(1.0 - alpha_t);
}

namespace {

double batch_loss(const DenoiserParams& p, std::span<const DenoiserExample> batch, const Eigen::MatrixXd& a_hat) {
  double sum = 0.0, n = 0.0;
  for (const auto& ex : batch) {
    const Grid zs[] = {ex.z_t}, cs[] = {ex.cond};
    const int steps[] = {ex.t};
    std::vector<std::vector<int>> wi;
    if (!ex.window_index.empty()) wi.push_back(ex.window_index);
    const Grid pred = predict_eps_batch(p, zs, cs, steps, wi, a_hat)[0];
    for (Eigen::Index i = 0; i < pred.rows(); ++i)
      for (Eigen::Index j = 0; j < pred.cols(); ++j)
        if (ex.target(i, j)) {
          const double e = ex.eps(i, j) - pred(i, j);
          sum += e * e;
          n += 1.0;
        }
  }
  return sum / n;
}

}  // namespace

FiniteDiffReport finite_diff_check(const DenoiserParams& params, std::span<const DenoiserExample> batch, const Graph& graph,
                                   double step) {
  if (!(step > 0.0)) throw ConfigError("finite_diff_check: step must be positive");
  const auto analytic = loss_and_grads(params, batch, graph);
  const Eigen::MatrixXd a_hat = graph.normalized();
  DenoiserParams work = params;
  DenoiserParams grads = analytic.grads;
  auto p = tensors_of(work);
  auto g = tensors_of(grads);
  std::vector<std::string> names;
  work.visit([&](std::string_view n, Eigen::MatrixXd&) { names.emplace_back(n); });

  FiniteDiffReport rep;
  for (std::size_t k = 0; k < p.size(); ++k) {
    Eigen::MatrixXd& m = *p[k];
    double diff = 0.0, scale = 0.0;
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      const double orig = m.data()[i];
      m.data()[i] = orig + step;
      const double up = batch_loss(work, batch, a_hat);
      m.data()[i] = orig - step;
      const double down = batch_loss(work, batch, a_hat);
      m.data()[i] = orig;
      const double num = (up - down) / (2.0 * step);
      const double ana = g[k]->data()[i];
      diff = std::max(diff, std::abs(num - ana));
      scale = std::max(scale, std::abs(ana));
      ++rep.parameters;
    }
    const double rel = scale > 0.0 ? diff / scale : diff;
    rep.per_tensor[names[k]] = rel;
    rep.max_rel_error = std::max(rep.max_rel_error, rel);
    rep.max_abs_error = std::max(rep.max_abs_error, diff);
  }
  return rep;
}

}  // namespace rdpi::oracle
