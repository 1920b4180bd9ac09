#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rdpi/rng.hpp"

namespace rdpi::audit {

struct Check {
  std::string name;
  bool passed = false;
  double residual = 0.0;
  double tolerance = 0.0;
  std::string detail;
};

/// Single-step chain vs closed-form marginal at step t.
struct DiscrepancyRow {
  int t = 0;
  double c_z0m_chain = 0.0;
  double c_z0m_marginal = 0.0;
  double c_z0c_chain = 0.0;
  double c_z0c_marginal = 0.0;
  double variance_chain = 0.0;
  double variance_marginal = 0.0;
};

struct Report {
  std::vector<Check> checks;
  std::vector<DiscrepancyRow> discrepancy;
  /// Stepwise-form ancestral chain under the oracle predictor, default schedule:
  /// largest |c_z0c - c_z0m| over the intermediate states. The last step
  /// collapses both coefficients to 1, so the drift only shows mid-chain.
  double ancestral_stepwise_max_drift = 0.0;
  int ancestral_stepwise_drift_step = 0;
  [[nodiscard]] bool all_passed() const;
  [[nodiscard]] std::string to_json() const;
};

struct Options {
  std::uint64_t seed = 0;
  int substitution_tuples = 10000;
  int mc_draws = 100000;
  int pushforward_chains = 100000;
};

// Individual audits. Each returns pass/fail with its worst residual.
Check schedule_identities(Rng& rng);
Check substitution_identity(int tuples, Rng& rng);
Check conditioning_audit(Rng& rng);
Check ddim_identity(Rng& rng);
Check accelerated_terminal(Rng& rng);
/// Mean coefficients (deterministic) and per-step variances (Monte Carlo).
Check ancestral_pushforward(int chains, Rng& rng);
Check compound_discrepancy(int draws, Rng& rng);
Check gradient_check(Rng& rng);
Check boundary_t1(Rng& rng);
Check unconditional_reduction(Rng& rng);
Check elbo_terms(Rng& rng);
Check accelerated_marginals(Rng& rng);

std::vector<DiscrepancyRow> discrepancy_table(int T, double beta_min, double beta_max, const std::vector<int>& steps);

Report run(const Options& options);

}  // namespace rdpi::audit
