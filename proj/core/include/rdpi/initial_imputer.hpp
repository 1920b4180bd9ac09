#pragma once

#include <string>
#include <string_view>
#include <utility>

#include "rdpi/autodiff.hpp"
#include "rdpi/data.hpp"
#include "rdpi/forward_process.hpp"
#include "rdpi/rng.hpp"

namespace rdpi {

enum class InitialStrategy { node_mean, interp_graph, trainable };

InitialStrategy parse_initial_strategy(std::string_view name);
std::string to_string(InitialStrategy s);

/// One direction of the recurrent imputer.
struct RecurrentDirection {
  Eigen::MatrixXd w_in;     // 2 x H, input = [filled value, mask flag]
  Eigen::MatrixXd w_hh;     // H x H
  Eigen::MatrixXd w_graph;  // H x H, applied to the neighbor-averaged state
  Eigen::MatrixXd bias;     // 1 x H
  Eigen::MatrixXd w_out;    // H x 1, one-step-ahead prediction
  Eigen::MatrixXd b_out;    // 1 x 1
};

/// Stage-one imputer. For `trainable`, a bidirectional tanh recurrence per
/// node with one graph hop per step: each direction predicts the next value
/// from its state, the prediction fills missing inputs, and the output mixes
/// the two directions' states just before each step.
struct InitialModel {
  InitialStrategy strategy = InitialStrategy::interp_graph;
  int hidden = 16;
  RecurrentDirection forward;
  RecurrentDirection backward;
  Eigen::MatrixXd w_comb;  // 2H x 1
  Eigen::MatrixXd b_comb;  // 1 x 1

  /// Trainable tensors are initialized only for the trainable strategy.
  static InitialModel make(InitialStrategy strategy, int hidden, Rng& rng);
  [[nodiscard]] bool has_parameters() const noexcept { return strategy == InitialStrategy::trainable; }

  template <typename F>
  void visit(F&& f) {
    if (!has_parameters()) return;
    f(std::string_view("fwd_w_in"), forward.w_in);
    f(std::string_view("fwd_w_hh"), forward.w_hh);
    f(std::string_view("fwd_w_graph"), forward.w_graph);
    f(std::string_view("fwd_bias"), forward.bias);
    f(std::string_view("fwd_w_out"), forward.w_out);
    f(std::string_view("fwd_b_out"), forward.b_out);
    f(std::string_view("bwd_w_in"), backward.w_in);
    f(std::string_view("bwd_w_hh"), backward.w_hh);
    f(std::string_view("bwd_w_graph"), backward.w_graph);
    f(std::string_view("bwd_bias"), backward.bias);
    f(std::string_view("bwd_w_out"), backward.w_out);
    f(std::string_view("bwd_b_out"), backward.b_out);
    f(std::string_view("w_comb"), w_comb);
    f(std::string_view("b_comb"), b_comb);
  }
  template <typename F>
  void visit(F&& f) const {
    const_cast<InitialModel*>(this)->visit([&f](std::string_view name, Eigen::MatrixXd& m) {
      f(name, static_cast<const Eigen::MatrixXd&>(m));
    });
  }
  /// Zero tensors with this model's shapes.
  [[nodiscard]] InitialModel zeros_like() const;
};

/// Imputes every cell not in `visible`; visible cells are copied verbatim.
Grid impute_initial(const Grid& values, const Mask& visible, const Graph& graph, const InitialModel& model);
/// Conditions on x.visible().
Grid impute_initial(const MaskedGrid& x, const Graph& graph, const InitialModel& model);

/// z0m = x_init - x and z0c = x_init on target cells, zero elsewhere.
/// Throws DataError if a target cell is not observed.
std::pair<ResidualGrid, ConditionGrid> residual_and_condition(const Grid& x_init, const MaskedGrid& x, const Mask& target);

enum class LossNorm { l1, l2 };

/// Mean |x_init - x| (or squared) over target cells.
double init_loss(const Grid& x_init, const Grid& x, const Mask& target, LossNorm norm = LossNorm::l1);

// ---- tape-level trainable path ----------------------------------------------------

struct RecurrentVars {
  ad::Var w_in, w_hh, w_graph, bias, w_out, b_out;
};
struct InitialVars {
  RecurrentVars forward, backward;
  ad::Var w_comb, b_comb;
};

InitialVars bind(ad::Tape& tape, const InitialModel& model, bool trainable);
void collect_grads(const InitialVars& vars, InitialModel& out);

/// Full fill for a batch in GridLayout order. `values` and `visible` are
/// layout.rows() x 1 (values zero where not visible); `a_row` is the
/// row-normalized adjacency. Visible rows of the result equal `values`.
ad::Var recurrent_impute(const InitialVars& vars, ad::Tape& tape, const Eigen::MatrixXd& values,
                         const Eigen::MatrixXd& visible, const ad::GridLayout& layout, const Eigen::MatrixXd& a_row);

}  // namespace rdpi
