#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "rdpi/grid.hpp"

namespace rdpi {

/// Spatiotemporal dataset: L time steps x N nodes.
///
/// `observed` marks cells with a value (m in the usual notation). `eval` marks
/// observed cells that are held out as imputation targets; the cells a model
/// may condition on are `observed && !eval`.
struct MaskedGrid {
  Grid values;
  Mask observed;
  Mask eval;
  std::vector<std::string> timestamps;  // raw tokens, written back verbatim
  std::vector<int> window_index;        // per row, in [0, window_period)
  std::vector<std::string> node_ids;

  [[nodiscard]] Eigen::Index time_steps() const noexcept { return values.rows(); }
  [[nodiscard]] Eigen::Index nodes() const noexcept { return values.cols(); }
  /// Cells a model is allowed to see.
  [[nodiscard]] Mask visible() const { return observed && !eval; }
  /// Throws DataError if the layer shapes or invariants are broken.
  void validate() const;
};

/// Weighted undirected sensor graph.
struct Graph {
  Eigen::MatrixXd adjacency;

  [[nodiscard]] Eigen::Index nodes() const noexcept { return adjacency.rows(); }
  /// D^{-1/2} (A + I) D^{-1/2}.
  [[nodiscard]] Eigen::MatrixXd normalized() const;
  /// Rows of A divided by their sums (zero rows stay zero).
  [[nodiscard]] Eigen::MatrixXd row_normalized() const;
  void validate() const;
};

/// Assigns window_index[t] = t mod period.
void assign_window_index(MaskedGrid& grid, int period);

// ---- CSV ----------------------------------------------------------------

struct CsvOptions {
  int window_period = 24;
};

/// values: header "timestamp,<node ids...>", one row per step; empty or NaN
/// cells are unobserved. mask (optional): same layout with 0/1 observed flags.
/// eval_mask (optional): same layout with 0/1 held-out flags.
/// adjacency: header "node,<node ids...>", N rows "id,w1,...,wN".
struct CsvPaths {
  std::filesystem::path values;
  std::optional<std::filesystem::path> mask;
  std::optional<std::filesystem::path> eval_mask;
  std::filesystem::path adjacency;
};

MaskedGrid load_grid_csv(const std::filesystem::path& values, const std::optional<std::filesystem::path>& mask,
                         const std::optional<std::filesystem::path>& eval_mask, const CsvOptions& options);
Graph load_adjacency_csv(const std::filesystem::path& path, const std::vector<std::string>& node_ids);
std::pair<MaskedGrid, Graph> load_csv(const CsvPaths& paths, const CsvOptions& options);

/// Values are written with 17 significant digits; unobserved cells are empty.
void save_values_csv(const std::filesystem::path& path, const MaskedGrid& grid);
void save_values_csv(const std::filesystem::path& path, const Grid& values, const std::vector<std::string>& timestamps,
                     const std::vector<std::string>& node_ids);
void save_mask_csv(const std::filesystem::path& path, const Mask& mask, const std::vector<std::string>& timestamps,
                   const std::vector<std::string>& node_ids);
void save_adjacency_csv(const std::filesystem::path& path, const Graph& graph, const std::vector<std::string>& node_ids);
/// Writes values.csv, mask.csv, eval_mask.csv, adjacency.csv into `dir`.
void save_dataset(const std::filesystem::path& dir, const MaskedGrid& grid, const Graph& graph);
std::pair<MaskedGrid, Graph> load_dataset(const std::filesystem::path& dir, const CsvOptions& options);

// ---- synthetic data -------------------------------------------------------

struct SynthParams {
  int steps_per_day = 24;
  double radius = 0.35;        // edge cutoff in the unit square
  double kernel_width = 0.2;   // Gaussian kernel bandwidth
  double offset_min = 40.0;
  double offset_max = 70.0;
  double amplitude_min = 5.0;
  double amplitude_max = 15.0;
  double ar_coefficient = 0.8;
  double noise_scale = 2.0;
};

/// Random geometric graph with Gaussian-kernel weights and a fully observed
/// signal: per-node offset + daily sinusoid (phase varies smoothly in space)
/// + graph-filtered AR(1) noise. Deterministic in `seed`.
std::pair<MaskedGrid, Graph> synth_generate(std::uint64_t seed, int nodes, int time_steps,
                                            const SynthParams& params = {});

// ---- masking ---------------------------------------------------------------

/// Each observed, not-yet-held-out cell joins eval with probability p.
MaskedGrid mask_point(const MaskedGrid& grid, double p, std::uint64_t seed);

struct BlockMaskParams {
  double p_point = 0.05;
  double p_block = 0.0015;
  double min_hours = 1.0;
  double max_hours = 4.0;
  double steps_per_hour = 1.0;
};

/// Point masking at p_point, then for each (node, step) with probability
/// p_block a block of uniform length in [min_hours, max_hours] (converted to
/// steps) starting at that step.
MaskedGrid mask_block(const MaskedGrid& grid, const BlockMaskParams& params, std::uint64_t seed);

/// Every observed cell of the listed nodes joins eval.
MaskedGrid mask_node(const MaskedGrid& grid, const std::vector<int>& nodes);

// ---- metrics & normalization ----------------------------------------------

struct Metrics {
  double mae = 0.0;
  double mse = 0.0;
  double mre = 0.0;  // sum|x - x_hat| / sum|x|
  Eigen::Index cells = 0;
};

Metrics metrics(const Grid& estimate, const Grid& truth, const Mask& eval);

struct Normalizer {
  Eigen::VectorXd mean;
  Eigen::VectorXd stddev;

  /// Per-node z-score statistics from the `cells` layer; std falls back to 1
  /// with fewer than two cells or zero spread.
  static Normalizer fit(const Grid& values, const Mask& cells);
  [[nodiscard]] Grid apply(const Grid& values) const;
  [[nodiscard]] Grid invert(const Grid& values) const;
};

}  // namespace rdpi
