#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "rdpi/data.hpp"
#include "rdpi/forward_process.hpp"
#include "rdpi/rng.hpp"
#include "rdpi/schedule.hpp"
#include "rdpi/trainer.hpp"

namespace rdpi {

/// Coefficients of the non-Markovian update z' = a z_t + b y_hat + d eps',
/// where y_hat = (z_t - sqrt(1 - alpha_t) eps_hat) / sqrt(alpha_t).
struct DdimCoeffs {
  double a = 0.0;
  double b = 0.0;
  double d = 0.0;
};

/// Between cumulative levels alpha_t (current) and alpha_prev (target).
/// Throws DomainError when d^2 > 1 - alpha_prev.
DdimCoeffs ddim_coeffs(double alpha_prev, double alpha_t, double d);
/// Consecutive steps t -> t-1 of `sched`.
DdimCoeffs ddim_coeffs(int t, double d, const NoiseSchedule& sched);

/// Default noise scale between two levels: the posterior standard deviation
/// sqrt((1 - alpha_prev) / (1 - alpha_t) * (1 - alpha_t / alpha_prev)).
double default_ddim_sigma(double alpha_prev, double alpha_t);

/// Descending evenly spaced sub-sequence of K steps from T; includes 1 when K >= 2.
std::vector<int> accelerated_steps(int T, int K);

/// z_{t-1} = posterior_mean_eps(z_t, z0c, eps_hat, t) + sqrt(beta_tilde_t) eps',
/// no noise at t = 1. Only z0c.target cells are updated; others stay zero.
Grid ancestral_step(const Grid& z_t, const ConditionGrid& z0c, int t, const Grid& eps_hat, const NoiseSchedule& sched,
                    Rng& rng, PosteriorForm form = PosteriorForm::stepwise);
/// Same with an explicit injected noise grid (ignored at t = 1).
Grid ancestral_step(const Grid& z_t, const ConditionGrid& z0c, int t, const Grid& eps_hat, const NoiseSchedule& sched,
                    const Grid& noise, PosteriorForm form = PosteriorForm::stepwise);

/// Accelerated update from level alpha_t to alpha_prev with noise scale d.
Grid accelerated_step(const Grid& z_t, const Grid& eps_hat, double alpha_prev, double alpha_t, double d,
                      const Grid& noise, const Mask& target);

enum class SamplerKind { ancestral, ddim };

struct ImputeOptions {
  SamplerKind sampler = SamplerKind::ancestral;
  int samples = 50;
  int accelerate_steps = 10;
  double eta = 1.0;  // multiplier on the default accelerated noise scale
  /// Reverse-step mean of the ancestral chain. See PosteriorForm.
  PosteriorForm form = PosteriorForm::marginal_consistent;
  std::uint64_t seed = 0;
  double lower_q = 0.05;
  double upper_q = 0.95;
  int max_batch = 64;  // windows per network call

  void validate() const;
};

struct ImputationResult {
  std::vector<Grid> samples;  // data units, visible cells copied from the input
  Grid median;
  Grid lower;
  Grid upper;
  Grid initial;  // stage-one fill in data units
  Mask target;   // imputed cells (not visible)
  std::optional<Metrics> metrics;          // median vs truth on eval cells
  std::optional<Metrics> initial_metrics;  // stage-one fill vs truth on eval cells
  std::optional<double> coverage;          // share of eval cells inside [lower, upper]
  std::vector<int> step_sequence;          // diffusion steps visited
};

/// Stage-one fill computed window by window, in data units.
Grid initial_fill(const Checkpoint& ckpt, const MaskedGrid& x, const Graph& graph);

/// Samples the residual for every non-visible cell and assembles imputations.
ImputationResult impute(const Checkpoint& ckpt, const MaskedGrid& x, const Graph& graph, const ImputeOptions& options);

ImputationResult ancestral_impute(const Checkpoint& ckpt, const MaskedGrid& x, const Graph& graph, int samples,
                                  std::uint64_t seed);
ImputationResult accelerated_impute(const Checkpoint& ckpt, const MaskedGrid& x, const Graph& graph, int K, double eta,
                                    int samples, std::uint64_t seed);

/// Type-7 quantile of each cell across samples.
Grid cellwise_quantile(const std::vector<Grid>& samples, double q);

/// Writes median.csv, lower.csv, upper.csv, initial.csv, samples/sample_<k>.csv
/// and summary.json into `dir`.
void save_imputation(const std::filesystem::path& dir, const ImputationResult& result, const MaskedGrid& x,
                     const ImputeOptions& options, bool write_samples = true);

}  // namespace rdpi
