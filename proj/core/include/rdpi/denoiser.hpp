#pragma once

#include <span>
#include <string_view>
#include <vector>

#include "rdpi/autodiff.hpp"
#include "rdpi/data.hpp"
#include "rdpi/grid.hpp"
#include "rdpi/rng.hpp"

namespace rdpi {

struct DenoiserConfig {
  int d = 32;           // embedding width
  int conv_width = 3;   // odd, symmetric zero padding
  int heads = 4;
  int window = 24;      // N_W: rows of the temporal table
  int nodes = 0;        // N_S: rows of the spatial table
  int steps = 50;       // T: rows of the step table

  void validate() const;
};

struct AttentionParams {
  Eigen::MatrixXd wq, wk, wv, wo;  // d x d
};

/// Trainable tensors of the noise-prediction network.
///
/// Pipeline: conv over time on [cond | z_t] + SiLU, add temporal / spatial /
/// step embeddings, temporal self-attention (residual), graph step
/// Z + SiLU(A_hat Z W_g), spatial self-attention (residual), linear head.
struct DenoiserParams {
  DenoiserConfig config;
  Eigen::MatrixXd conv_weight;  // (2 * conv_width) x d, row = offset * 2 + channel
  Eigen::MatrixXd conv_bias;    // 1 x d
  Eigen::MatrixXd temporal_table;
  Eigen::MatrixXd spatial_table;
  Eigen::MatrixXd step_table;
  AttentionParams temporal;
  AttentionParams spatial;
  Eigen::MatrixXd graph_weight;  // d x d
  Eigen::MatrixXd head;          // d x 1

  /// Uniform(+-1/sqrt(fan_in)) weights, Uniform(+-0.02) embedding tables.
  static DenoiserParams init(const DenoiserConfig& config, Rng& rng);
  /// Same shapes, all zero. Used as a gradient accumulator.
  static DenoiserParams zeros(const DenoiserConfig& config);

  template <typename F>
  void visit(F&& f) {
    f(std::string_view("conv_weight"), conv_weight);
    f(std::string_view("conv_bias"), conv_bias);
    f(std::string_view("temporal_table"), temporal_table);
    f(std::string_view("spatial_table"), spatial_table);
    f(std::string_view("step_table"), step_table);
    f(std::string_view("temporal_wq"), temporal.wq);
    f(std::string_view("temporal_wk"), temporal.wk);
    f(std::string_view("temporal_wv"), temporal.wv);
    f(std::string_view("temporal_wo"), temporal.wo);
    f(std::string_view("graph_weight"), graph_weight);
    f(std::string_view("spatial_wq"), spatial.wq);
    f(std::string_view("spatial_wk"), spatial.wk);
    f(std::string_view("spatial_wv"), spatial.wv);
    f(std::string_view("spatial_wo"), spatial.wo);
    f(std::string_view("head"), head);
  }
  template <typename F>
  void visit(F&& f) const {
    const_cast<DenoiserParams*>(this)->visit([&f](std::string_view name, Eigen::MatrixXd& m) {
      f(name, static_cast<const Eigen::MatrixXd&>(m));
    });
  }

  [[nodiscard]] std::size_t parameter_count() const;
  /// Throws DimensionError on shapes inconsistent with `config`, NumericError
  /// on non-finite entries.
  void validate() const;
};

// ---- flattening --------------------------------------------------------------

/// Stacks time x node grids into one column in GridLayout order.
Eigen::MatrixXd grids_to_rows(std::span<const Grid> grids);
std::vector<Grid> rows_to_grids(const Eigen::MatrixXd& rows, Eigen::Index batch, Eigen::Index time, Eigen::Index nodes);

// ---- tape-level forward ------------------------------------------------------

/// Per-row lookups for the embedding tables of a batch.
struct DenoiserIndex {
  ad::GridLayout layout;
  std::vector<int> window_row;  // temporal table row per feature row
  std::vector<int> node_row;
  std::vector<int> step_row;    // t - 1 per feature row

  /// `window_index[b]` holds one entry per time step of item b; empty means 0..time-1.
  static DenoiserIndex make(Eigen::Index batch, Eigen::Index time, Eigen::Index nodes, std::span<const int> steps,
                            std::span<const std::vector<int>> window_index);
};

struct DenoiserVars {
  ad::Var conv_weight, conv_bias, temporal_table, spatial_table, step_table;
  ad::Var t_wq, t_wk, t_wv, t_wo, graph_weight, s_wq, s_wk, s_wv, s_wo, head;
};

/// Places the parameters on the tape (as parameters or constants).
DenoiserVars bind(ad::Tape& tape, const DenoiserParams& params, bool trainable);
/// Copies parameter gradients from the tape into `out` (zero where absent).
void collect_grads(const DenoiserVars& vars, DenoiserParams& out);

/// Network output for a batch; `z` and `cond` are layout.rows() x 1.
ad::Var denoiser_forward(const DenoiserVars& vars, const DenoiserConfig& config, const ad::Var& z,
                         const ad::Var& cond, const DenoiserIndex& index, const Eigen::MatrixXd& a_hat,
                         std::vector<Eigen::MatrixXd>* attention_tap = nullptr);

// ---- grid-level API ----------------------------------------------------------

/// eps_hat for one window. `cond` is the condition channel, `window_index`
/// the temporal-table row per time step (empty: 0..N_W-1).
Grid predict_eps(const DenoiserParams& params, const Grid& z_t, const Grid& cond, int t, const Graph& graph,
                 std::span<const int> window_index = {}, std::vector<Eigen::MatrixXd>* attention_tap = nullptr);

/// Batched inference; a_hat is the normalized adjacency.
std::vector<Grid> predict_eps_batch(const DenoiserParams& params, std::span<const Grid> z_t,
                                    std::span<const Grid> cond, std::span<const int> steps,
                                    std::span<const std::vector<int>> window_index, const Eigen::MatrixXd& a_hat);

struct DenoiserExample {
  Grid z_t;
  Grid cond;
  int t = 1;
  Grid eps;     // regression target
  Mask target;  // cells entering the loss
  std::vector<int> window_index;
};

struct LossAndGrads {
  double loss = 0.0;
  DenoiserParams grads;
};

/// Mean of (eps - eps_hat)^2 over all target cells of the batch and its
/// gradient with respect to every parameter tensor.
LossAndGrads loss_and_grads(const DenoiserParams& params, std::span<const DenoiserExample> batch, const Graph& graph);

}  // namespace rdpi
