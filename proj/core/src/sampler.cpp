#include "rdpi/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "rdpi/error.hpp"

namespace rdpi {

DdimCoeffs ddim_coeffs(double alpha_prev, double alpha_t, double d) {
  if (!(alpha_t > 0.0 && alpha_t < 1.0) || !(alpha_prev > 0.0 && alpha_prev <= 1.0))
    throw DomainError("ddim_coeffs: cumulative alphas outside (0, 1]");
  if (!(d >= 0.0)) throw DomainError("ddim_coeffs: noise scale must be >= 0");
  const double rad = 1.0 - alpha_prev - d * d;
  if (rad < 0.0) throw DomainError("ddim_coeffs: d^2 exceeds 1 - alpha_prev");
  DdimCoeffs c;
  c.a = std::sqrt(rad / (1.0 - alpha_t));
  c.b = std::sqrt(alpha_prev) - c.a * std::sqrt(alpha_t);
  c.d = d;
  return c;
}

DdimCoeffs ddim_coeffs(int t, double d, const NoiseSchedule& sched) {
  const auto s = sched.at(t);
  return ddim_coeffs(s.alpha_cum_prev, s.alpha_cum, d);
}

double default_ddim_sigma(double alpha_prev, double alpha_t) {
  if (alpha_prev >= 1.0) return 0.0;
  const double v = (1.0 - alpha_prev) / (1.0 - alpha_t) * (1.0 - alpha_t / alpha_prev);
  return std::sqrt(std::max(0.0, v));
}

std::vector<int> accelerated_steps(int T, int K) {
  if (T < 1 || K < 1 || K > T) throw ConfigError("accelerate steps must lie in [1, T]");
  if (K == 1) return {T};
  std::vector<int> out;
  for (int k = K - 1; k >= 0; --k)
    out.push_back(1 + static_cast<int>(std::lround(static_cast<double>(T - 1) * k / (K - 1))));
  return out;
}

Grid ancestral_step(const Grid& z_t, const ConditionGrid& z0c, int t, const Grid& eps_hat, const NoiseSchedule& sched,
                    const Grid& noise, PosteriorForm form) {
  Grid mean = posterior_mean_eps(z_t, z0c, eps_hat, t, sched, form);
  if (t > 1) {
    if (noise.rows() != z_t.rows() || noise.cols() != z_t.cols()) throw DimensionError("ancestral_step: noise shape");
    mean += std::sqrt(sched.beta_tilde(t)) * noise;
  }
  return z0c.target.select(mean, 0.0);
}

Grid ancestral_step(const Grid& z_t, const ConditionGrid& z0c, int t, const Grid& eps_hat, const NoiseSchedule& sched,
                    Rng& rng, PosteriorForm form) {
  const Grid noise = t > 1 ? rng.normal_grid(z_t.rows(), z_t.cols()) : Grid::Zero(z_t.rows(), z_t.cols());
  return ancestral_step(z_t, z0c, t, eps_hat, sched, noise, form);
}

Grid accelerated_step(const Grid& z_t, const Grid& eps_hat, double alpha_prev, double alpha_t, double d,
                      const Grid& noise, const Mask& target) {
  const double rad = 1.0 - alpha_prev - d * d;
  if (rad < 0.0 || !(d >= 0.0)) throw DomainError("accelerated_step: d^2 exceeds 1 - alpha_prev");
  const double keep = std::sqrt(alpha_prev / alpha_t);
  const double c_eps = std::sqrt(rad) - std::sqrt(alpha_prev * (1.0 - alpha_t) / alpha_t);
  Grid out = keep * z_t + c_eps * eps_hat;
  if (d > 0.0) out += d * noise;
  return target.select(out, 0.0);
}

void ImputeOptions::validate() const {
  if (samples < 1) throw ConfigError("samples must be >= 1");
  if (accelerate_steps < 1) throw ConfigError("accelerate steps must be >= 1");
  if (!(eta >= 0.0 && eta <= 1.0)) throw ConfigError("eta must lie in [0, 1]");
  if (!(lower_q >= 0.0 && lower_q <= upper_q && upper_q <= 1.0)) throw ConfigError("need 0 <= lower_q <= upper_q <= 1");
  if (max_batch < 1) throw ConfigError("max_batch must be >= 1");
}

Grid cellwise_quantile(const std::vector<Grid>& samples, double q) {
  if (samples.empty()) throw DataError("quantile: no samples");
  const Eigen::Index R = samples[0].rows(), C = samples[0].cols();
  const std::size_t S = samples.size();
  Grid out(R, C);
  std::vector<double> v(S);
  for (Eigen::Index i = 0; i < R; ++i)
    for (Eigen::Index j = 0; j < C; ++j) {
      for (std::size_t s = 0; s < S; ++s) v[s] = samples[s](i, j);
      std::sort(v.begin(), v.end());
      const double h = (static_cast<double>(S) - 1.0) * q;
      const auto lo = static_cast<std::size_t>(std::floor(h));
      const std::size_t hi = std::min(lo + 1, S - 1);
      out(i, j) = v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
    }
  return out;
}

namespace {

struct Windowed {
  std::vector<Eigen::Index> starts;
  std::vector<Grid> values;  // normalized, zero where not observed
  std::vector<Mask> visible;
  std::vector<Mask> target;
  std::vector<std::vector<int>> window_index;
  std::vector<Grid> x_init;  // normalized
  std::vector<Eigen::Index> owner;  // window owning each row
};

Windowed split_windows(const Checkpoint& ck, const MaskedGrid& x, const Graph& graph) {
  x.validate();
  graph.validate();
  const int W = ck.config.window;
  const Eigen::Index L = x.time_steps(), N = x.nodes();
  if (N != ck.denoiser.config.nodes || graph.nodes() != N) throw DimensionError("impute: node count differs from the checkpoint");
  if (L < W) throw DataError("impute: series shorter than one window");
  for (int w : x.window_index)
    if (w < 0 || w >= W) throw DataError("impute: window index outside [0, window)");
  const Mask vis = x.visible();
  if (!vis.any()) throw DataError("impute: no visible cells");
  const Grid xn = x.observed.select(ck.normalizer.apply(x.values), 0.0);

  Windowed w;
  w.starts = window_starts(L, W, W);
  w.owner.assign(static_cast<std::size_t>(L), -1);
  for (std::size_t k = 0; k < w.starts.size(); ++k) {
    const Eigen::Index s = w.starts[k];
    for (Eigen::Index t = s; t < s + W; ++t)
      if (w.owner[static_cast<std::size_t>(t)] < 0) w.owner[static_cast<std::size_t>(t)] = static_cast<Eigen::Index>(k);
    w.values.push_back(xn.middleRows(s, W));
    w.visible.push_back(vis.middleRows(s, W));
    w.target.push_back(!w.visible.back());
    w.window_index.emplace_back(x.window_index.begin() + s, x.window_index.begin() + s + W);
    if (w.visible.back().any()) w.x_init.push_back(impute_initial(w.values.back(), w.visible.back(), graph, ck.initial));
    else w.x_init.push_back(Grid::Zero(W, N));
  }
  return w;
}

/// Reassembles per-window normalized grids into a data-unit grid, visible
/// cells copied from x.
Grid assemble(const Checkpoint& ck, const MaskedGrid& x, const Windowed& w, const std::vector<Grid>& parts) {
  Grid norm(x.time_steps(), x.nodes());
  for (Eigen::Index t = 0; t < x.time_steps(); ++t) {
    const auto k = static_cast<std::size_t>(w.owner[static_cast<std::size_t>(t)]);
    norm.row(t) = parts[k].row(t - w.starts[k]);
  }
  return x.visible().select(x.values, ck.normalizer.invert(norm));
}

}  // namespace

Grid initial_fill(const Checkpoint& ck, const MaskedGrid& x, const Graph& graph) {
  const Windowed w = split_windows(ck, x, graph);
  return assemble(ck, x, w, w.x_init);
}

ImputationResult impute(const Checkpoint& ck, const MaskedGrid& x, const Graph& graph, const ImputeOptions& opt) {
  opt.validate();
  const Windowed w = split_windows(ck, x, graph);
  const auto& ab = ck.config.ablation;
  const auto& sched = ck.schedule;
  const int T = sched.steps();
  const Eigen::Index W = ck.config.window, N = x.nodes();
  const std::size_t K = w.starts.size();
  const auto S = static_cast<std::size_t>(opt.samples);
  const Eigen::MatrixXd a_hat = graph.normalized();

  std::vector<ConditionGrid> z0c;
  for (std::size_t k = 0; k < K; ++k)
    z0c.push_back({ab.no_cond_forward ? Grid::Zero(W, N) : Grid(w.target[k].select(w.x_init[k], 0.0)), w.target[k]});

  ImputationResult res;
  res.step_sequence = opt.sampler == SamplerKind::ancestral ? accelerated_steps(T, T)
                                                            : accelerated_steps(T, std::min(opt.accelerate_steps, T));
  if (opt.sampler == SamplerKind::ddim && opt.accelerate_steps > T) throw ConfigError("accelerate steps exceed T");

  const Rng root(opt.seed);
  std::vector<Rng> rngs;
  std::vector<Grid> z(S * K);
  for (std::size_t s = 0; s < S; ++s) {
    rngs.push_back(root.derive(s));
    for (std::size_t k = 0; k < K; ++k) z[s * K + k] = w.target[k].select(rngs[s].normal_grid(W, N), 0.0);
  }

  std::vector<Grid> pred(S * K);
  const auto batch = static_cast<std::size_t>(opt.max_batch);
  for (std::size_t i = 0; i < res.step_sequence.size(); ++i) {
    const int t = res.step_sequence[i];
    for (std::size_t b = 0; b < S * K; b += batch) {
      const std::size_t e = std::min(S * K, b + batch);
      std::vector<Grid> zs(z.begin() + static_cast<std::ptrdiff_t>(b), z.begin() + static_cast<std::ptrdiff_t>(e));
      std::vector<Grid> cs;
      std::vector<std::vector<int>> wi;
      for (std::size_t j = b; j < e; ++j) {
        cs.push_back(w.x_init[j % K]);
        wi.push_back(w.window_index[j % K]);
      }
      const std::vector<int> steps(e - b, t);
      auto out = predict_eps_batch(ck.denoiser, zs, cs, steps, wi, a_hat);
      for (std::size_t j = b; j < e; ++j) pred[j] = std::move(out[j - b]);
    }
    const double alpha_t = sched.alpha_cum(t);
    const int t_prev = i + 1 < res.step_sequence.size() ? res.step_sequence[i + 1] : 0;
    const double alpha_prev = sched.alpha_cum(t_prev);
    const bool last = t_prev == 0;
    for (std::size_t s = 0; s < S; ++s)
      for (std::size_t k = 0; k < K; ++k) {
        Grid& zk = z[s * K + k];
        const Grid& p = pred[s * K + k];
        if (opt.sampler == SamplerKind::ancestral) {
          const Grid noise = t > 1 ? rngs[s].normal_grid(W, N) : Grid::Zero(W, N);
          if (ab.predict_x0) {
            Grid mean = posterior_mean_z0(zk, ResidualGrid{p, w.target[k]}, z0c[k], t, sched, opt.form);
            if (t > 1) mean += std::sqrt(sched.beta_tilde(t)) * noise;
            zk = w.target[k].select(mean, 0.0);
          } else {
            zk = ancestral_step(zk, z0c[k], t, p, sched, noise, opt.form);
          }
        } else {
          const double d = last ? 0.0 : opt.eta * default_ddim_sigma(alpha_prev, alpha_t);
          const Grid noise = last ? Grid::Zero(W, N) : rngs[s].normal_grid(W, N);
          Grid eps_hat = p;
          if (ab.predict_x0)
            eps_hat = (zk - std::sqrt(alpha_t) * (p + z0c[k].values)) / std::sqrt(1.0 - alpha_t);
          zk = accelerated_step(zk, eps_hat, alpha_prev, alpha_t, d, noise, w.target[k]);
        }
        if (!zk.allFinite()) throw NumericError("impute: non-finite state at step " + std::to_string(t));
      }
  }

  res.target = !x.visible();
  res.initial = assemble(ck, x, w, w.x_init);
  for (std::size_t s = 0; s < S; ++s) {
    std::vector<Grid> parts(K);
    for (std::size_t k = 0; k < K; ++k) {
      const Grid zm = z[s * K + k] - z0c[k].values;
      Grid xhat;
      if (ab.no_residual) xhat = -zm;
      else if (ab.flip_residual_sign) xhat = w.x_init[k] + zm;
      else xhat = w.x_init[k] - zm;
      parts[k] = w.target[k].select(xhat, w.values[k]);
    }
    res.samples.push_back(assemble(ck, x, w, parts));
  }
  res.median = cellwise_quantile(res.samples, 0.5);
  res.lower = cellwise_quantile(res.samples, opt.lower_q);
  res.upper = cellwise_quantile(res.samples, opt.upper_q);
  if (x.eval.any()) {
    res.metrics = metrics(res.median, x.values, x.eval);
    res.initial_metrics = metrics(res.initial, x.values, x.eval);
    const Mask inside = (x.values.array() >= res.lower.array()) && (x.values.array() <= res.upper.array());
    res.coverage = static_cast<double>((inside && x.eval).count()) / static_cast<double>(x.eval.count());
  }
  return res;
}

ImputationResult ancestral_impute(const Checkpoint& ck, const MaskedGrid& x, const Graph& graph, int samples,
                                  std::uint64_t seed) {
  ImputeOptions o;
  o.sampler = SamplerKind::ancestral;
  o.samples = samples;
  o.seed = seed;
  return impute(ck, x, graph, o);
}

ImputationResult accelerated_impute(const Checkpoint& ck, const MaskedGrid& x, const Graph& graph, int K, double eta,
                                    int samples, std::uint64_t seed) {
  ImputeOptions o;
  o.sampler = SamplerKind::ddim;
  o.accelerate_steps = K;
  o.eta = eta;
  o.samples = samples;
  o.seed = seed;
  return impute(ck, x, graph, o);
}

namespace {

nlohmann::json metrics_json(const Metrics& m) {
  return {{"mae", m.mae}, {"mse", m.mse}, {"mre", m.mre}, {"cells", m.cells}};
}

}  // namespace

void save_imputation(const std::filesystem::path& dir, const ImputationResult& r, const MaskedGrid& x,
                     const ImputeOptions& opt, bool write_samples) {
  std::filesystem::create_directories(dir);
  save_values_csv(dir / "median.csv", r.median, x.timestamps, x.node_ids);
  save_values_csv(dir / "lower.csv", r.lower, x.timestamps, x.node_ids);
  save_values_csv(dir / "upper.csv", r.upper, x.timestamps, x.node_ids);
  save_values_csv(dir / "initial.csv", r.initial, x.timestamps, x.node_ids);
  if (write_samples)
    for (std::size_t s = 0; s < r.samples.size(); ++s)
      save_values_csv(dir / "samples" / ("sample_" + std::to_string(s) + ".csv"), r.samples[s], x.timestamps, x.node_ids);
  nlohmann::json j;
  j["sampler"] = opt.sampler == SamplerKind::ancestral ? "ancestral" : "ddim";
  j["posterior_form"] = opt.form == PosteriorForm::stepwise ? "stepwise" : "marginal_consistent";
  j["samples"] = opt.samples;
  j["seed"] = opt.seed;
  j["eta"] = opt.eta;
  j["step_count"] = r.step_sequence.size();
  j["steps"] = r.step_sequence;
  j["quantiles"] = {opt.lower_q, 0.5, opt.upper_q};
  j["imputed_cells"] = r.target.count();
  if (r.metrics) j["metrics"] = metrics_json(*r.metrics);
  if (r.initial_metrics) j["initial_metrics"] = metrics_json(*r.initial_metrics);
  if (r.coverage) j["coverage"] = *r.coverage;
  std::ofstream out(dir / "summary.json");
  if (!out) throw DataError("cannot write summary.json");
  out << j.dump(2) << '\n';
}

}  // namespace rdpi
