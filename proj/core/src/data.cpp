#include "rdpi/data.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "rdpi/error.hpp"
#include "rdpi/rng.hpp"

namespace rdpi {

void MaskedGrid::validate() const {
  const auto L = values.rows(), N = values.cols();
  if (observed.rows() != L || observed.cols() != N || eval.rows() != L || eval.cols() != N)
    throw DimensionError("grid: mask layers do not match the value grid");
  if ((eval && !observed).any()) throw DataError("grid: eval cells must be a subset of observed cells");
  for (Eigen::Index i = 0; i < L; ++i)
    for (Eigen::Index j = 0; j < N; ++j)
      if (observed(i, j) && !std::isfinite(values(i, j))) throw DataError("grid: non-finite observed value");
  if (static_cast<Eigen::Index>(timestamps.size()) != L) throw DataError("grid: timestamp count mismatch");
  if (static_cast<Eigen::Index>(window_index.size()) != L) throw DataError("grid: window index count mismatch");
  if (static_cast<Eigen::Index>(node_ids.size()) != N) throw DataError("grid: node id count mismatch");
}

Eigen::MatrixXd Graph::normalized() const {
  const auto N = adjacency.rows();
  Eigen::MatrixXd a = adjacency + Eigen::MatrixXd::Identity(N, N);
  const Eigen::VectorXd inv_sqrt = a.rowwise().sum().array().rsqrt();
  return inv_sqrt.asDiagonal() * a * inv_sqrt.asDiagonal();
}

Eigen::MatrixXd Graph::row_normalized() const {
  Eigen::MatrixXd out = adjacency;
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    const double s = out.row(i).sum();
    if (s > 0.0) out.row(i) /= s;
  }
  return out;
}

void Graph::validate() const {
  const auto N = adjacency.rows();
  if (adjacency.cols() != N) throw DimensionError("graph: adjacency must be square");
  if (!adjacency.allFinite()) throw DataError("graph: non-finite weight");
  if ((adjacency.array() < 0.0).any()) throw DataError("graph: negative weight");
  if (adjacency.diagonal().cwiseAbs().maxCoeff() != 0.0) throw DataError("graph: diagonal must be zero");
  if ((adjacency - adjacency.transpose()).cwiseAbs().maxCoeff() > 1e-12) throw DataError("graph: adjacency not symmetric");
}

void assign_window_index(MaskedGrid& grid, int period) {
  if (period < 1) throw ConfigError("window period must be >= 1");
  grid.window_index.resize(static_cast<std::size_t>(grid.time_steps()));
  for (std::size_t t = 0; t < grid.window_index.size(); ++t) grid.window_index[t] = static_cast<int>(t % static_cast<std::size_t>(period));
}

std::pair<MaskedGrid, Graph> synth_generate(std::uint64_t seed, int nodes, int time_steps, const SynthParams& p) {
  if (nodes < 2) throw ConfigError("synth: need at least 2 nodes");
  if (time_steps < p.steps_per_day) throw ConfigError("synth: series shorter than one window period");
  Rng rng(seed);
  const auto N = static_cast<Eigen::Index>(nodes);
  const auto L = static_cast<Eigen::Index>(time_steps);

  Eigen::MatrixXd pos(N, 2);
  for (Eigen::Index i = 0; i < N; ++i) {
    pos(i, 0) = rng.uniform();
    pos(i, 1) = rng.uniform();
  }
  Graph graph{Eigen::MatrixXd::Zero(N, N)};
  const double h2 = p.kernel_width * p.kernel_width;
  for (Eigen::Index i = 0; i < N; ++i)
    for (Eigen::Index j = i + 1; j < N; ++j) {
      const double d = (pos.row(i) - pos.row(j)).norm();
      if (d <= p.radius) graph.adjacency(i, j) = graph.adjacency(j, i) = std::exp(-d * d / h2);
    }
  // No isolated nodes: link each to its nearest neighbor.
  for (Eigen::Index i = 0; i < N; ++i) {
    if (graph.adjacency.row(i).sum() > 0.0) continue;
    Eigen::Index best = -1;
    double best_d = 0.0;
    for (Eigen::Index j = 0; j < N; ++j) {
      if (j == i) continue;
      const double d = (pos.row(i) - pos.row(j)).norm();
      if (best < 0 || d < best_d) { best = j; best_d = d; }
    }
    graph.adjacency(i, best) = graph.adjacency(best, i) = std::exp(-best_d * best_d / h2);
  }

  Eigen::VectorXd offset(N), amplitude(N), phase(N);
  for (Eigen::Index i = 0; i < N; ++i) {
    offset(i) = p.offset_min + (p.offset_max - p.offset_min) * rng.uniform();
    amplitude(i) = p.amplitude_min + (p.amplitude_max - p.amplitude_min) * rng.uniform();
    phase(i) = std::numbers::pi * (pos(i, 0) + pos(i, 1));
  }

  Graph with_loops{graph.adjacency + Eigen::MatrixXd::Identity(N, N)};
  const Eigen::MatrixXd filter = with_loops.row_normalized();
  Eigen::VectorXd noise = Eigen::VectorXd::Zero(N);
  MaskedGrid grid;
  grid.values.resize(L, N);
  for (Eigen::Index t = 0; t < L; ++t) {
    Eigen::VectorXd shock(N);
    for (Eigen::Index i = 0; i < N; ++i) shock(i) = rng.normal();
    noise = p.ar_coefficient * (filter * noise) + p.noise_scale * shock;
    const double angle = 2.0 * std::numbers::pi * static_cast<double>(t) / p.steps_per_day;
    for (Eigen::Index i = 0; i < N; ++i)
      grid.values(t, i) = offset(i) + amplitude(i) * std::sin(angle + phase(i)) + noise(i);
  }
  grid.observed = Mask::Constant(L, N, true);
  grid.eval = Mask::Constant(L, N, false);
  grid.timestamps.reserve(static_cast<std::size_t>(L));
  for (Eigen::Index t = 0; t < L; ++t) grid.timestamps.push_back(std::to_string(t));
  for (Eigen::Index i = 0; i < N; ++i) grid.node_ids.push_back("n" + std::to_string(i));
  assign_window_index(grid, p.steps_per_day);
  return {std::move(grid), std::move(graph)};
}

MaskedGrid mask_point(const MaskedGrid& grid, double p, std::uint64_t seed) {
  if (!(p >= 0.0 && p < 1.0)) throw ConfigError("mask_point: p must lie in [0, 1)");
  MaskedGrid out = grid;
  for (Eigen::Index t = 0; t < grid.time_steps(); ++t)
    for (Eigen::Index n = 0; n < grid.nodes(); ++n)
      if (grid.observed(t, n) && counter_uniform(seed, static_cast<std::uint64_t>(t), static_cast<std::uint64_t>(n)) < p)
        out.eval(t, n) = true;
  return out;
}

MaskedGrid mask_block(const MaskedGrid& grid, const BlockMaskParams& bp, std::uint64_t seed) {
  if (!(bp.p_point >= 0.0 && bp.p_point < 1.0) || !(bp.p_block >= 0.0 && bp.p_block < 1.0))
    throw ConfigError("mask_block: probabilities must lie in [0, 1)");
  if (!(bp.min_hours >= 1.0) || bp.max_hours < bp.min_hours || !(bp.steps_per_hour > 0.0))
    throw ConfigError("mask_block: need 1 <= min_hours <= max_hours and steps_per_hour > 0");
  MaskedGrid out = bp.p_point > 0.0 ? mask_point(grid, bp.p_point, seed) : grid;
  const auto min_len = static_cast<Eigen::Index>(std::llround(bp.min_hours * bp.steps_per_hour));
  const auto max_len = static_cast<Eigen::Index>(std::llround(bp.max_hours * bp.steps_per_hour));
  const std::uint64_t start_seed = mix_seed(seed, 1), length_seed = mix_seed(seed, 2);
  const auto L = grid.time_steps();
  for (Eigen::Index n = 0; n < grid.nodes(); ++n) {
    // Blocks never overlap or touch so each masked run keeps its drawn length.
    Eigen::Index free_from = 0;
    for (Eigen::Index t = 0; t < L; ++t) {
      const auto ut = static_cast<std::uint64_t>(t), un = static_cast<std::uint64_t>(n);
      if (counter_uniform(start_seed, ut, un) >= bp.p_block) continue;
      const double u = counter_uniform(length_seed, ut, un);
      const Eigen::Index len = min_len + std::min<Eigen::Index>(static_cast<Eigen::Index>(u * static_cast<double>(max_len - min_len + 1)), max_len - min_len);
      if (t < free_from || t + len > L) continue;
      if (t > 0 && out.eval(t - 1, n)) continue;
      if (t + len < L && out.eval(t + len, n)) continue;
      for (Eigen::Index k = t; k < t + len; ++k)
        if (grid.observed(k, n)) out.eval(k, n) = true;
      free_from = t + len + 1;
    }
  }
  return out;
}

MaskedGrid mask_node(const MaskedGrid& grid, const std::vector<int>& nodes) {
  MaskedGrid out = grid;
  std::vector<bool> hit(static_cast<std::size_t>(grid.nodes()), false);
  for (int n : nodes) {
    if (n < 0 || n >= grid.nodes()) throw IndexError("mask_node: unknown node " + std::to_string(n));
    hit[static_cast<std::size_t>(n)] = true;
    out.eval.col(n) = grid.observed.col(n);
  }
  if (std::all_of(hit.begin(), hit.end(), [](bool b) { return b; }))
    throw ConfigError("mask_node: masking every node leaves nothing to condition on");
  return out;
}

Metrics metrics(const Grid& estimate, const Grid& truth, const Mask& eval) {
  if (estimate.rows() != truth.rows() || estimate.cols() != truth.cols() || eval.rows() != truth.rows() ||
      eval.cols() != truth.cols())
    throw DimensionError("metrics: shapes disagree");
  Metrics m;
  double abs_sum = 0.0, sq_sum = 0.0, truth_sum = 0.0;
  for (Eigen::Index i = 0; i < truth.rows(); ++i)
    for (Eigen::Index j = 0; j < truth.cols(); ++j) {
      if (!eval(i, j)) continue;
      const double e = truth(i, j) - estimate(i, j);
      abs_sum += std::abs(e);
      sq_sum += e * e;
      truth_sum += std::abs(truth(i, j));
      ++m.cells;
    }
  if (m.cells == 0) throw DataError("metrics: empty evaluation mask");
  if (truth_sum == 0.0) throw DataError("metrics: relative error undefined for all-zero truth");
  m.mae = abs_sum / static_cast<double>(m.cells);
  m.mse = sq_sum / static_cast<double>(m.cells);
  m.mre = abs_sum / truth_sum;
  return m;
}

Normalizer Normalizer::fit(const Grid& values, const Mask& cells) {
  Normalizer z;
  const auto N = values.cols();
  z.mean = Eigen::VectorXd::Zero(N);
  z.stddev = Eigen::VectorXd::Ones(N);
  for (Eigen::Index j = 0; j < N; ++j) {
    double sum = 0.0;
    Eigen::Index n = 0;
    for (Eigen::Index i = 0; i < values.rows(); ++i)
      if (cells(i, j)) { sum += values(i, j); ++n; }
    if (n == 0) continue;
    const double mean = sum / static_cast<double>(n);
    double ss = 0.0;
    for (Eigen::Index i = 0; i < values.rows(); ++i)
      if (cells(i, j)) ss += (values(i, j) - mean) * (values(i, j) - mean);
    z.mean(j) = mean;
    const double sd = std::sqrt(ss / static_cast<double>(n));
    if (n >= 2 && sd > 0.0) z.stddev(j) = sd;
  }
  return z;
}

Grid Normalizer::apply(const Grid& values) const {
  return ((values.rowwise() - mean.transpose()).array().rowwise() / stddev.transpose().array()).matrix();
}

Grid Normalizer::invert(const Grid& values) const {
  return ((values.array().rowwise() * stddev.transpose().array()).rowwise() + mean.transpose().array()).matrix();
}

}  // namespace rdpi
