#include "rdpi/denoiser.hpp"

#include <cmath>
#include <string>

#include "rdpi/error.hpp"

namespace rdpi {

using ad::Var;

void DenoiserConfig::validate() const {
  if (d < 1 || heads < 1 || d % heads != 0) throw ConfigError("denoiser: d must be a positive multiple of heads");
  if (conv_width < 1 || conv_width % 2 == 0) throw ConfigError("denoiser: conv_width must be odd");
  if (window < 1) throw ConfigError("denoiser: window must be >= 1");
  if (nodes < 1) throw ConfigError("denoiser: nodes must be >= 1");
  if (steps < 1) throw ConfigError("denoiser: steps must be >= 1");
}

namespace {

Eigen::MatrixXd uniform(Eigen::Index rows, Eigen::Index cols, double bound, Rng& rng) {
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = bound * (2.0 * rng.uniform() - 1.0);
  return m;
}

struct Shape {
  Eigen::Index rows, cols;
};

Shape expected_shape(std::string_view name, const DenoiserConfig& c) {
  if (name == "conv_weight") return {2 * c.conv_width, c.d};
  if (name == "conv_bias") return {1, c.d};
  if (name == "temporal_table") return {c.window, c.d};
  if (name == "spatial_table") return {c.nodes, c.d};
  if (name == "step_table") return {c.steps, c.d};
  if (name == "head") return {c.d, 1};
  return {c.d, c.d};
}

}  // namespace

DenoiserParams DenoiserParams::zeros(const DenoiserConfig& config) {
  config.validate();
  DenoiserParams p;
  p.config = config;
  p.visit([&](std::string_view name, Eigen::MatrixXd& m) {
    const Shape s = expected_shape(name, config);
    m = Eigen::MatrixXd::Zero(s.rows, s.cols);
  });
  return p;
}

DenoiserParams DenoiserParams::init(const DenoiserConfig& config, Rng& rng) {
  DenoiserParams p = zeros(config);
  p.visit([&](std::string_view name, Eigen::MatrixXd& m) {
    double bound = 0.02;
    if (name == "conv_weight" || name == "conv_bias") bound = 1.0 / std::sqrt(2.0 * config.conv_width);
    else if (name.find("table") == std::string_view::npos) bound = 1.0 / std::sqrt(static_cast<double>(config.d));
    m = uniform(m.rows(), m.cols(), bound, rng);
  });
  return p;
}

std::size_t DenoiserParams::parameter_count() const {
  std::size_t n = 0;
  visit([&](std::string_view, const Eigen::MatrixXd& m) { n += static_cast<std::size_t>(m.size()); });
  return n;
}

void DenoiserParams::validate() const {
  config.validate();
  visit([&](std::string_view name, const Eigen::MatrixXd& m) {
    const Shape s = expected_shape(name, config);
    if (m.rows() != s.rows || m.cols() != s.cols)
      throw DimensionError("denoiser: tensor " + std::string(name) + " has the wrong shape");
    if (!m.allFinite()) throw NumericError("denoiser: tensor " + std::string(name) + " is not finite");
  });
}

Eigen::MatrixXd grids_to_rows(std::span<const Grid> grids) {
  if (grids.empty()) return {};
  const Eigen::Index L = grids[0].rows(), N = grids[0].cols();
  Eigen::MatrixXd out(static_cast<Eigen::Index>(grids.size()) * L * N, 1);
  Eigen::Index r = 0;
  for (const auto& g : grids) {
    if (g.rows() != L || g.cols() != N) throw DimensionError("grids_to_rows: grids differ in shape");
    for (Eigen::Index t = 0; t < L; ++t)
      for (Eigen::Index n = 0; n < N; ++n) out(r++, 0) = g(t, n);
  }
  return out;
}

std::vector<Grid> rows_to_grids(const Eigen::MatrixXd& rows, Eigen::Index batch, Eigen::Index time, Eigen::Index nodes) {
  if (rows.rows() != batch * time * nodes || rows.cols() != 1) throw DimensionError("rows_to_grids: size mismatch");
  std::vector<Grid> out(static_cast<std::size_t>(batch), Grid(time, nodes));
  Eigen::Index r = 0;
  for (auto& g : out)
    for (Eigen::Index t = 0; t < time; ++t)
      for (Eigen::Index n = 0; n < nodes; ++n) g(t, n) = rows(r++, 0);
  return out;
}

DenoiserIndex DenoiserIndex::make(Eigen::Index batch, Eigen::Index time, Eigen::Index nodes, std::span<const int> steps,
                                  std::span<const std::vector<int>> window_index) {
  if (static_cast<Eigen::Index>(steps.size()) != batch) throw DimensionError("denoiser: one step per batch item");
  if (!window_index.empty() && static_cast<Eigen::Index>(window_index.size()) != batch)
    throw DimensionError("denoiser: one window index vector per batch item");
  DenoiserIndex idx;
  idx.layout = {batch, time, nodes};
  const auto rows = static_cast<std::size_t>(idx.layout.rows());
  idx.window_row.resize(rows);
  idx.node_row.resize(rows);
  idx.step_row.resize(rows);
  std::size_t r = 0;
  for (Eigen::Index b = 0; b < batch; ++b) {
    const std::vector<int>* wi = window_index.empty() ? nullptr : &window_index[static_cast<std::size_t>(b)];
    if (wi && !wi->empty() && static_cast<Eigen::Index>(wi->size()) != time)
      throw DimensionError("denoiser: window index length must equal the window");
    for (Eigen::Index t = 0; t < time; ++t)
      for (Eigen::Index n = 0; n < nodes; ++n, ++r) {
        idx.window_row[r] = (wi && !wi->empty()) ? (*wi)[static_cast<std::size_t>(t)] : static_cast<int>(t);
        idx.node_row[r] = static_cast<int>(n);
        idx.step_row[r] = steps[static_cast<std::size_t>(b)] - 1;
      }
  }
  return idx;
}

DenoiserVars bind(ad::Tape& tape, const DenoiserParams& p, bool trainable) {
  auto put = [&](const Eigen::MatrixXd& m) { return trainable ? tape.parameter(m) : tape.constant(m); };
  DenoiserVars v;
  v.conv_weight = put(p.conv_weight);
  v.conv_bias = put(p.conv_bias);
  v.temporal_table = put(p.temporal_table);
  v.spatial_table = put(p.spatial_table);
  v.step_table = put(p.step_table);
  v.t_wq = put(p.temporal.wq);
  v.t_wk = put(p.temporal.wk);
  v.t_wv = put(p.temporal.wv);
  v.t_wo = put(p.temporal.wo);
  v.graph_weight = put(p.graph_weight);
  v.s_wq = put(p.spatial.wq);
  v.s_wk = put(p.spatial.wk);
  v.s_wv = put(p.spatial.wv);
  v.s_wo = put(p.spatial.wo);
  v.head = put(p.head);
  return v;
}

void collect_grads(const DenoiserVars& v, DenoiserParams& out) {
  auto take = [](const Var& var, Eigen::MatrixXd& dst) {
    const auto& g = var.grad();
    if (g.size() == 0) dst.setZero();
    else dst = g;
  };
  take(v.conv_weight, out.conv_weight);
  take(v.conv_bias, out.conv_bias);
  take(v.temporal_table, out.temporal_table);
  take(v.spatial_table, out.spatial_table);
  take(v.step_table, out.step_table);
  take(v.t_wq, out.temporal.wq);
  take(v.t_wk, out.temporal.wk);
  take(v.t_wv, out.temporal.wv);
  take(v.t_wo, out.temporal.wo);
  take(v.graph_weight, out.graph_weight);
  take(v.s_wq, out.spatial.wq);
  take(v.s_wk, out.spatial.wk);
  take(v.s_wv, out.spatial.wv);
  take(v.s_wo, out.spatial.wo);
  take(v.head, out.head);
}

namespace {

Var attention_block(const Var& z, const Var& wq, const Var& wk, const Var& wv, const Var& wo,
                    const ad::GridLayout& layout, ad::AttentionAxis axis, const DenoiserConfig& c,
                    std::vector<Eigen::MatrixXd>* tap) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(c.d));
  Var a = ad::self_attention(ad::matmul(z, wq), ad::matmul(z, wk), ad::matmul(z, wv), layout, axis, c.heads, scale, tap);
  return ad::add(z, ad::matmul(a, wo));
}

}  // namespace

Var denoiser_forward(const DenoiserVars& v, const DenoiserConfig& c, const Var& z, const Var& cond,
                     const DenoiserIndex& index, const Eigen::MatrixXd& a_hat, std::vector<Eigen::MatrixXd>* tap) {
  const auto& layout = index.layout;
  if (z.rows() != layout.rows() || cond.rows() != layout.rows() || z.cols() != 1 || cond.cols() != 1)
    throw DimensionError("denoiser: inputs disagree with the batch layout");
  if (layout.nodes != c.nodes) throw DimensionError("denoiser: node count differs from the configuration");
  if (layout.time > c.window) throw DimensionError("denoiser: window longer than the temporal table");
  for (int s : index.step_row)
    if (s < 0 || s >= c.steps) throw IndexError("denoiser: diffusion step out of range");
  for (int w : index.window_row)
    if (w < 0 || w >= c.window) throw IndexError("denoiser: window index out of range");

  const Var channels[] = {cond, z};
  const Var x = ad::concat_cols(channels);
  const int r = c.conv_width / 2;
  std::vector<Var> taps;
  for (int o = -r; o <= r; ++o) taps.push_back(ad::time_shift(x, layout, o));
  Var h = ad::silu(ad::add_row(ad::matmul(ad::concat_cols(taps), v.conv_weight), v.conv_bias));

  h = ad::add(h, ad::gather_rows(v.temporal_table, index.window_row));
  h = ad::add(h, ad::gather_rows(v.spatial_table, index.node_row));
  h = ad::add(h, ad::gather_rows(v.step_table, index.step_row));

  h = attention_block(h, v.t_wq, v.t_wk, v.t_wv, v.t_wo, layout, ad::AttentionAxis::temporal, c, tap);
  h = ad::add(h, ad::silu(ad::matmul(ad::block_mix(h, a_hat, layout), v.graph_weight)));
  h = attention_block(h, v.s_wq, v.s_wk, v.s_wv, v.s_wo, layout, ad::AttentionAxis::spatial, c, tap);
  return ad::matmul(h, v.head);
}

std::vector<Grid> predict_eps_batch(const DenoiserParams& params, std::span<const Grid> z_t, std::span<const Grid> cond,
                                    std::span<const int> steps, std::span<const std::vector<int>> window_index,
                                    const Eigen::MatrixXd& a_hat) {
  if (z_t.empty()) return {};
  if (cond.size() != z_t.size()) throw DimensionError("predict_eps: one condition grid per input");
  const Eigen::Index L = z_t[0].rows(), N = z_t[0].cols();
  for (const auto& g : cond)
    if (g.rows() != L || g.cols() != N) throw DimensionError("predict_eps: condition shape differs from z_t");
  const auto B = static_cast<Eigen::Index>(z_t.size());
  const DenoiserIndex idx = DenoiserIndex::make(B, L, N, steps, window_index);
  ad::Tape tape;
  const DenoiserVars vars = bind(tape, params, false);
  const Var out = denoiser_forward(vars, params.config, tape.constant(grids_to_rows(z_t)),
                                   tape.constant(grids_to_rows(cond)), idx, a_hat);
  return rows_to_grids(out.value(), B, L, N);
}

Grid predict_eps(const DenoiserParams& params, const Grid& z_t, const Grid& cond, int t, const Graph& graph,
                 std::span<const int> window_index, std::vector<Eigen::MatrixXd>* tap) {
  if (z_t.rows() != cond.rows() || z_t.cols() != cond.cols()) throw DimensionError("predict_eps: condition shape differs from z_t");
  if (graph.nodes() != z_t.cols()) throw DimensionError("predict_eps: graph size differs from the grid");
  std::vector<std::vector<int>> wi;
  if (!window_index.empty()) wi.emplace_back(window_index.begin(), window_index.end());
  const int steps[] = {t};
  const DenoiserIndex idx = DenoiserIndex::make(1, z_t.rows(), z_t.cols(), steps, wi);
  ad::Tape tape;
  const DenoiserVars vars = bind(tape, params, false);
  const Grid zs[] = {z_t}, cs[] = {cond};
  const Var out = denoiser_forward(vars, params.config, tape.constant(grids_to_rows(zs)), tape.constant(grids_to_rows(cs)),
                                   idx, graph.normalized(), tap);
  return rows_to_grids(out.value(), 1, z_t.rows(), z_t.cols())[0];
}

LossAndGrads loss_and_grads(const DenoiserParams& params, std::span<const DenoiserExample> batch, const Graph& graph) {
  if (batch.empty()) throw DataError("loss_and_grads: empty batch");
  const Eigen::Index L = batch[0].z_t.rows(), N = batch[0].z_t.cols();
  std::vector<Grid> z, cond, eps, weight;
  std::vector<int> steps;
  std::vector<std::vector<int>> wi;
  for (const auto& ex : batch) {
    if (ex.z_t.rows() != L || ex.z_t.cols() != N || ex.cond.rows() != L || ex.cond.cols() != N || ex.eps.rows() != L ||
        ex.eps.cols() != N || ex.target.rows() != L || ex.target.cols() != N)
      throw DimensionError("loss_and_grads: batch items differ in shape");
    z.push_back(ex.z_t);
    cond.push_back(ex.cond);
    eps.push_back(ex.eps);
    weight.push_back(mask_to_grid(ex.target));
    steps.push_back(ex.t);
    wi.push_back(ex.window_index);
  }
  const auto B = static_cast<Eigen::Index>(batch.size());
  const DenoiserIndex idx = DenoiserIndex::make(B, L, N, steps, wi);
  ad::Tape tape;
  const DenoiserVars vars = bind(tape, params, true);
  const Var pred = denoiser_forward(vars, params.config, tape.constant(grids_to_rows(z)), tape.constant(grids_to_rows(cond)),
                                    idx, graph.normalized());
  const Var loss = ad::weighted_mean_square(ad::sub(pred, tape.constant(grids_to_rows(eps))), grids_to_rows(weight));
  tape.backward(loss);
  LossAndGrads out{loss.value()(0, 0), DenoiserParams::zeros(params.config)};
  collect_grads(vars, out.grads);
  return out;
}

}  // namespace rdpi
