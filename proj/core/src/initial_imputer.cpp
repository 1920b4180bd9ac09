#include "rdpi/initial_imputer.hpp"

#include <cmath>

#include "rdpi/denoiser.hpp"
#include "rdpi/error.hpp"

namespace rdpi {

using ad::Var;

InitialStrategy parse_initial_strategy(std::string_view name) {
  if (name == "node_mean") return InitialStrategy::node_mean;
  if (name == "interp_graph") return InitialStrategy::interp_graph;
  if (name == "trainable") return InitialStrategy::trainable;
  throw ConfigError("unknown initial strategy '" + std::string(name) + "'");
}

std::string to_string(InitialStrategy s) {
  switch (s) {
    case InitialStrategy::node_mean: return "node_mean";
    case InitialStrategy::interp_graph: return "interp_graph";
    case InitialStrategy::trainable: return "trainable";
  }
  return "?";
}

namespace {

Eigen::MatrixXd uniform(Eigen::Index rows, Eigen::Index cols, double bound, Rng& rng) {
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = bound * (2.0 * rng.uniform() - 1.0);
  return m;
}

RecurrentDirection make_direction(int h, Rng& rng) {
  const double in = 1.0 / std::sqrt(2.0), hid = 1.0 / std::sqrt(static_cast<double>(h));
  RecurrentDirection d;
  d.w_in = uniform(2, h, in, rng);
  d.w_hh = uniform(h, h, hid, rng);
  d.w_graph = uniform(h, h, hid, rng);
  d.bias = Eigen::MatrixXd::Zero(1, h);
  d.w_out = uniform(h, 1, hid, rng);
  d.b_out = Eigen::MatrixXd::Zero(1, 1);
  return d;
}

void check_inputs(const Grid& values, const Mask& visible, const Graph& graph) {
  if (visible.rows() != values.rows() || visible.cols() != values.cols())
    throw DimensionError("impute_initial: mask shape differs from values");
  if (graph.nodes() != values.cols()) throw DimensionError("impute_initial: graph size differs from the grid");
  if (!visible.any()) throw DataError("impute_initial: no visible cells to condition on");
}

double visible_mean(const Grid& values, const Mask& visible) {
  return visible.select(values, 0.0).sum() / static_cast<double>(visible.count());
}

Grid fill_node_mean(const Grid& values, const Mask& visible) {
  const double global = visible_mean(values, visible);
  Grid out = values;
  for (Eigen::Index j = 0; j < values.cols(); ++j) {
    const auto n = visible.col(j).count();
    const double mean = n > 0 ? visible.col(j).select(values.col(j), 0.0).sum() / static_cast<double>(n) : global;
    for (Eigen::Index i = 0; i < values.rows(); ++i)
      if (!visible(i, j)) out(i, j) = mean;
  }
  return out;
}

Grid fill_interp_graph(const Grid& values, const Mask& visible, const Graph& graph) {
  const Eigen::Index L = values.rows(), N = values.cols();
  Grid out = values;
  std::vector<bool> has(static_cast<std::size_t>(N), false);
  for (Eigen::Index j = 0; j < N; ++j) {
    std::vector<Eigen::Index> known;
    for (Eigen::Index i = 0; i < L; ++i)
      if (visible(i, j)) known.push_back(i);
    if (known.empty()) continue;
    has[static_cast<std::size_t>(j)] = true;
    for (Eigen::Index i = 0; i < known.front(); ++i) out(i, j) = values(known.front(), j);
    for (Eigen::Index i = known.back() + 1; i < L; ++i) out(i, j) = values(known.back(), j);
    for (std::size_t k = 0; k + 1 < known.size(); ++k) {
      const Eigen::Index a = known[k], b = known[k + 1];
      for (Eigen::Index i = a + 1; i < b; ++i) {
        const double w = static_cast<double>(i - a) / static_cast<double>(b - a);
        out(i, j) = (1.0 - w) * values(a, j) + w * values(b, j);
      }
    }
  }
  const double global = visible_mean(values, visible);
  for (Eigen::Index j = 0; j < N; ++j) {
    if (has[static_cast<std::size_t>(j)]) continue;
    double total = 0.0;
    Eigen::VectorXd acc = Eigen::VectorXd::Zero(L);
    for (Eigen::Index k = 0; k < N; ++k) {
      const double w = graph.adjacency(j, k);
      if (w > 0.0 && has[static_cast<std::size_t>(k)]) {
        acc += w * out.col(k);
        total += w;
      }
    }
    if (total > 0.0) out.col(j) = acc / total;
    else out.col(j).setConstant(global);
  }
  return out;
}

}  // namespace

InitialModel InitialModel::make(InitialStrategy strategy, int hidden, Rng& rng) {
  if (hidden < 1) throw ConfigError("initial imputer: hidden size must be >= 1");
  InitialModel m;
  m.strategy = strategy;
  m.hidden = hidden;
  if (strategy != InitialStrategy::trainable) return m;
  m.forward = make_direction(hidden, rng);
  m.backward = make_direction(hidden, rng);
  m.w_comb = uniform(2 * hidden, 1, 1.0 / std::sqrt(2.0 * hidden), rng);
  m.b_comb = Eigen::MatrixXd::Zero(1, 1);
  return m;
}

InitialModel InitialModel::zeros_like() const {
  InitialModel z = *this;
  z.visit([](std::string_view, Eigen::MatrixXd& m) { m.setZero(); });
  return z;
}

Grid impute_initial(const Grid& values, const Mask& visible, const Graph& graph, const InitialModel& model) {
  check_inputs(values, visible, graph);
  Grid clean = visible.select(values, 0.0);
  switch (model.strategy) {
    case InitialStrategy::node_mean: return fill_node_mean(clean, visible);
    case InitialStrategy::interp_graph: return fill_interp_graph(clean, visible, graph);
    case InitialStrategy::trainable: break;
  }
  ad::Tape tape;
  const InitialVars vars = bind(tape, model, false);
  const Grid gv[] = {clean};
  const Grid gm[] = {mask_to_grid(visible)};
  const ad::GridLayout layout{1, values.rows(), values.cols()};
  const Var out = recurrent_impute(vars, tape, grids_to_rows(gv), grids_to_rows(gm), layout, graph.row_normalized());
  Grid fill = rows_to_grids(out.value(), 1, values.rows(), values.cols())[0];
  if (!fill.allFinite()) throw NumericError("impute_initial: non-finite fill");
  return visible.select(values, fill);
}

Grid impute_initial(const MaskedGrid& x, const Graph& graph, const InitialModel& model) {
  return impute_initial(x.values, x.visible(), graph, model);
}

std::pair<ResidualGrid, ConditionGrid> residual_and_condition(const Grid& x_init, const MaskedGrid& x, const Mask& target) {
  if (x_init.rows() != x.values.rows() || x_init.cols() != x.values.cols() || target.rows() != x_init.rows() ||
      target.cols() != x_init.cols())
    throw DimensionError("residual_and_condition: shapes disagree");
  if ((target && !x.observed).any()) throw DataError("residual_and_condition: target cell without ground truth");
  ResidualGrid zm{target.select(x_init - x.values, 0.0), target};
  ConditionGrid zc{target.select(x_init, 0.0), target};
  return {std::move(zm), std::move(zc)};
}

double init_loss(const Grid& x_init, const Grid& x, const Mask& target, LossNorm norm) {
  if (x_init.rows() != x.rows() || x_init.cols() != x.cols() || target.rows() != x.rows() || target.cols() != x.cols())
    throw DimensionError("init_loss: shapes disagree");
  const auto n = target.count();
  if (n == 0) throw DataError("init_loss: empty target mask");
  const Eigen::ArrayXXd r = (x_init - x).array();
  const double s = norm == LossNorm::l1 ? target.select(r.abs(), 0.0).sum() : target.select(r.square(), 0.0).sum();
  return s / static_cast<double>(n);
}

namespace {

RecurrentVars bind_direction(ad::Tape& tape, const RecurrentDirection& d, bool trainable) {
  auto put = [&](const Eigen::MatrixXd& m) { return trainable ? tape.parameter(m) : tape.constant(m); };
  return {put(d.w_in), put(d.w_hh), put(d.w_graph), put(d.bias), put(d.w_out), put(d.b_out)};
}

void take(const Var& v, Eigen::MatrixXd& dst) {
  if (v.grad().size() == 0) dst.setZero();
  else dst = v.grad();
}

void collect_direction(const RecurrentVars& v, RecurrentDirection& d) {
  take(v.w_in, d.w_in);
  take(v.w_hh, d.w_hh);
  take(v.w_graph, d.w_graph);
  take(v.bias, d.bias);
  take(v.w_out, d.w_out);
  take(v.b_out, d.b_out);
}

/// Runs one direction; returns the state held just before each step, in time order.
std::vector<Var> run_direction(const RecurrentVars& v, ad::Tape& tape, const Var& values, const Eigen::MatrixXd& visible,
                               const ad::GridLayout& layout, const Eigen::MatrixXd& a_row, bool reverse) {
  const Eigen::Index rows = layout.batch * layout.nodes;
  const Eigen::Index H = v.w_hh.rows();
  const Eigen::Index L = layout.time;
  Var h = tape.constant(Eigen::MatrixXd::Zero(rows, H));
  std::vector<Var> before(static_cast<std::size_t>(L));
  for (Eigen::Index k = 0; k < L; ++k) {
    const Eigen::Index t = reverse ? L - 1 - k : k;
    before[static_cast<std::size_t>(t)] = h;
    Eigen::MatrixXd m(rows, 1);
    for (Eigen::Index b = 0; b < layout.batch; ++b) m.middleRows(b * layout.nodes, layout.nodes) = visible.middleRows(layout.row(b, t, 0), layout.nodes);
    const Var x_t = ad::time_slice(values, layout, t);
    const Var pred = ad::add_row(ad::matmul(h, v.w_out), v.b_out);
    const Var filled = ad::add(x_t, ad::mul_const(pred, (1.0 - m.array()).matrix()));
    const Var parts[] = {filled, tape.constant(m)};
    const Var pre = ad::add_row(
        ad::add(ad::add(ad::matmul(ad::concat_cols(parts), v.w_in), ad::matmul(h, v.w_hh)),
                ad::matmul(ad::node_mix(h, a_row, layout.batch), v.w_graph)),
        v.bias);
    h = ad::tanh(pre);
  }
  return before;
}

}  // namespace

InitialVars bind(ad::Tape& tape, const InitialModel& model, bool trainable) {
  if (!model.has_parameters()) throw ConfigError("initial imputer: strategy has no trainable parameters");
  auto put = [&](const Eigen::MatrixXd& m) { return trainable ? tape.parameter(m) : tape.constant(m); };
  return {bind_direction(tape, model.forward, trainable), bind_direction(tape, model.backward, trainable),
          put(model.w_comb), put(model.b_comb)};
}

void collect_grads(const InitialVars& vars, InitialModel& out) {
  collect_direction(vars.forward, out.forward);
  collect_direction(vars.backward, out.backward);
  take(vars.w_comb, out.w_comb);
  take(vars.b_comb, out.b_comb);
}

Var recurrent_impute(const InitialVars& vars, ad::Tape& tape, const Eigen::MatrixXd& values, const Eigen::MatrixXd& visible,
                     const ad::GridLayout& layout, const Eigen::MatrixXd& a_row) {
  if (values.rows() != layout.rows() || visible.rows() != layout.rows())
    throw DimensionError("recurrent_impute: inputs disagree with the layout");
  if (a_row.rows() != layout.nodes || a_row.cols() != layout.nodes)
    throw DimensionError("recurrent_impute: adjacency size differs from the layout");
  const Var x = tape.constant(visible.array().select(values, 0.0).matrix());
  const auto fwd = run_direction(vars.forward, tape, x, visible, layout, a_row, false);
  const auto bwd = run_direction(vars.backward, tape, x, visible, layout, a_row, true);
  const Var parts[] = {ad::stack_time(fwd, layout), ad::stack_time(bwd, layout)};
  const Var y = ad::add_row(ad::matmul(ad::concat_cols(parts), vars.w_comb), vars.b_comb);
  const Eigen::MatrixXd keep = visible.array().select(values, 0.0).matrix();
  return ad::add_const(ad::mul_const(y, (1.0 - visible.array()).matrix()), keep);
}

}  // namespace rdpi
