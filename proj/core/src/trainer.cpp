#include "rdpi/trainer.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "rdpi/error.hpp"
#include "rdpi/optim.hpp"

namespace rdpi {

using ad::Var;
using nlohmann::json;

namespace {

constexpr const char* kAblationNames[] = {"no_cond_forward", "no_residual",  "freeze_initial",
                                          "skip_pretrain",   "predict_x0",   "flip_residual_sign"};

bool* ablation_slot(Ablations& a, std::string_view name) {
  if (name == "no_cond_forward") return &a.no_cond_forward;
  if (name == "no_residual") return &a.no_residual;
  if (name == "freeze_initial") return &a.freeze_initial;
  if (name == "skip_pretrain") return &a.skip_pretrain;
  if (name == "predict_x0") return &a.predict_x0;
  if (name == "flip_residual_sign") return &a.flip_residual_sign;
  return nullptr;
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string_view::npos) return {};
  return std::string(s.substr(b, s.find_last_not_of(" \t") - b + 1));
}

}  // namespace

Ablations Ablations::parse(std::string_view list) {
  Ablations a;
  std::size_t start = 0;
  while (start <= list.size()) {
    const auto comma = list.find(',', start);
    const std::string name = trim(list.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
    if (!name.empty() && name != "none") {
      bool* slot = ablation_slot(a, name);
      if (!slot) throw ConfigError("unknown ablation flag '" + name + "'");
      *slot = true;
    }
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return a;
}

std::string Ablations::to_string() const {
  std::string out;
  Ablations copy = *this;
  for (const char* name : kAblationNames)
    if (*ablation_slot(copy, name)) out += (out.empty() ? "" : ",") + std::string(name);
  return out.empty() ? "none" : out;
}

void TrainConfig::validate() const {
  if (diffusion_steps < 1) throw ConfigError("diffusion_steps must be >= 1");
  if (!(beta_min > 0.0) || beta_max < beta_min || !(beta_max < 1.0)) throw ConfigError("need 0 < beta_min <= beta_max < 1");
  if (!(lambda >= 0.0)) throw ConfigError("lambda must be >= 0");
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
  if (epochs < 0 || pretrain_epochs < 0) throw ConfigError("epoch counts must be >= 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (window < 1 || window_stride < 1) throw ConfigError("window and window_stride must be >= 1");
  if (!(remask_p > 0.0 && remask_p < 1.0)) throw ConfigError("remask_p must lie in (0, 1)");
  if (initial_hidden < 1) throw ConfigError("initial_hidden must be >= 1");
  DenoiserConfig{d, conv_width, heads, window, 1, diffusion_steps}.validate();
  if (ablation.no_residual && ablation.flip_residual_sign)
    throw ConfigError("no_residual and flip_residual_sign are mutually exclusive");
}

std::string TrainConfig::to_json() const {
  json j;
  j["diffusion_steps"] = diffusion_steps;
  j["beta_min"] = beta_min;
  j["beta_max"] = beta_max;
  j["lambda"] = lambda;
  j["learning_rate"] = learning_rate;
  j["epochs"] = epochs;
  j["pretrain_epochs"] = pretrain_epochs;
  j["batch_size"] = batch_size;
  j["window"] = window;
  j["window_stride"] = window_stride;
  j["seed"] = seed;
  j["masking"] = masking == MaskingMode::in_sample ? "in_sample" : "out_of_sample";
  j["remask_p"] = remask_p;
  j["initial"] = rdpi::to_string(initial);
  j["initial_hidden"] = initial_hidden;
  j["init_norm"] = init_norm == LossNorm::l1 ? "l1" : "l2";
  j["d"] = d;
  j["conv_width"] = conv_width;
  j["heads"] = heads;
  j["ablation"] = ablation.to_string();
  return j.dump(2);
}

TrainConfig TrainConfig::from_json(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("train config: expected a JSON object");
  TrainConfig c;
  try {
    for (auto it = j.begin(); it != j.end(); ++it) {
      const std::string& k = it.key();
      const json& v = it.value();
      if (k == "diffusion_steps") c.diffusion_steps = v.get<int>();
      else if (k == "beta_min") c.beta_min = v.get<double>();
      else if (k == "beta_max") c.beta_max = v.get<double>();
      else if (k == "lambda") c.lambda = v.get<double>();
      else if (k == "learning_rate") c.learning_rate = v.get<double>();
      else if (k == "epochs") c.epochs = v.get<int>();
      else if (k == "pretrain_epochs") c.pretrain_epochs = v.get<int>();
      else if (k == "batch_size") c.batch_size = v.get<int>();
      else if (k == "window") c.window = v.get<int>();
      else if (k == "window_stride") c.window_stride = v.get<int>();
      else if (k == "seed") c.seed = v.get<std::uint64_t>();
      else if (k == "masking") {
        const auto s = v.get<std::string>();
        if (s == "in_sample") c.masking = MaskingMode::in_sample;
        else if (s == "out_of_sample") c.masking = MaskingMode::out_of_sample;
        else throw ConfigError("masking must be in_sample or out_of_sample");
      } else if (k == "remask_p") c.remask_p = v.get<double>();
      else if (k == "initial") c.initial = parse_initial_strategy(v.get<std::string>());
      else if (k == "initial_hidden") c.initial_hidden = v.get<int>();
      else if (k == "init_norm") {
        const auto s = v.get<std::string>();
        if (s == "l1") c.init_norm = LossNorm::l1;
        else if (s == "l2") c.init_norm = LossNorm::l2;
        else throw ConfigError("init_norm must be l1 or l2");
      } else if (k == "d") c.d = v.get<int>();
      else if (k == "conv_width") c.conv_width = v.get<int>();
      else if (k == "heads") c.heads = v.get<int>();
      else if (k == "ablation") c.ablation = Ablations::parse(v.get<std::string>());
      else throw ConfigError("train config: unknown key '" + k + "'");
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
  c.validate();
  return c;
}

std::vector<Eigen::Index> window_starts(Eigen::Index length, int window, int stride) {
  if (window < 1 || stride < 1) throw ConfigError("window and stride must be >= 1");
  if (length < window) throw DataError("series shorter than one window");
  std::vector<Eigen::Index> out;
  for (Eigen::Index s = 0; s + window <= length; s += stride) out.push_back(s);
  if (out.back() + window < length) out.push_back(length - window);
  return out;
}

std::vector<WindowItem> draw_batch(const MaskedGrid& g, std::span<const Eigen::Index> starts, const TrainConfig& config,
                                   Rng& rng) {
  const Eigen::Index W = config.window, N = g.nodes();
  const Mask visible = g.visible();
  std::vector<WindowItem> out;
  out.reserve(starts.size());
  for (Eigen::Index s : starts) {
    if (s < 0 || s + W > g.time_steps()) throw IndexError("draw_batch: window outside the series");
    WindowItem it;
    it.observed = g.observed.middleRows(s, W);
    it.values = it.observed.select(g.values.middleRows(s, W), 0.0);
    const Mask vis = visible.middleRows(s, W);
    if (config.masking == MaskingMode::out_of_sample) {
      it.target = Mask::Constant(W, N, false);
      for (Eigen::Index i = 0; i < W; ++i)
        for (Eigen::Index j = 0; j < N; ++j)
          if (vis(i, j) && rng.uniform() < config.remask_p) it.target(i, j) = true;
      const auto nvis = vis.count();
      if (!it.target.any() && nvis >= 2) {
        // Guarantee one target per window.
        int pick = rng.uniform_int(0, static_cast<int>(nvis) - 1);
        for (Eigen::Index i = 0; i < W && pick >= 0; ++i)
          for (Eigen::Index j = 0; j < N && pick >= 0; ++j)
            if (vis(i, j) && pick-- == 0) it.target(i, j) = true;
      }
      it.cond = vis && !it.target;
    } else {
      it.target = g.eval.middleRows(s, W);
      it.cond = vis;
    }
    it.t = rng.uniform_int(1, config.diffusion_steps);
    it.eps = rng.normal_grid(W, N);
    it.window_index.assign(g.window_index.begin() + s, g.window_index.begin() + s + W);
    out.push_back(std::move(it));
  }
  return out;
}

namespace {

struct BatchRows {
  ad::GridLayout layout;
  Eigen::MatrixXd x, cond, target, eps, sqrt_a, sqrt_1ma;
  std::vector<int> steps;
  std::vector<std::vector<int>> window_index;
};

BatchRows flatten(std::span<const WindowItem> batch, const NoiseSchedule& sched) {
  if (batch.empty()) throw DataError("empty batch");
  BatchRows r;
  const Eigen::Index W = batch[0].values.rows(), N = batch[0].values.cols();
  r.layout = {static_cast<Eigen::Index>(batch.size()), W, N};
  std::vector<Grid> x, cond, target, eps, sa, sb;
  for (const auto& it : batch) {
    x.push_back(it.values);
    cond.push_back(mask_to_grid(it.cond));
    target.push_back(mask_to_grid(it.target));
    eps.push_back(it.eps);
    const double a = sched.alpha_cum(it.t);
    sa.push_back(Grid::Constant(W, N, std::sqrt(a)));
    sb.push_back(Grid::Constant(W, N, std::sqrt(1.0 - a)));
    r.steps.push_back(it.t);
    r.window_index.push_back(it.window_index);
  }
  r.x = grids_to_rows(x);
  r.cond = grids_to_rows(cond);
  r.target = grids_to_rows(target);
  r.eps = grids_to_rows(eps);
  r.sqrt_a = grids_to_rows(sa);
  r.sqrt_1ma = grids_to_rows(sb);
  return r;
}

Var initial_fill(ad::Tape& tape, const JointModel& model, std::span<const WindowItem> batch, const BatchRows& r,
                 const Graph& graph, bool trainable, InitialVars* vars) {
  if (model.initial.has_parameters()) {
    *vars = bind(tape, model.initial, trainable);
    return recurrent_impute(*vars, tape, r.x, r.cond, r.layout, graph.row_normalized());
  }
  std::vector<Grid> fills;
  for (const auto& it : batch) fills.push_back(impute_initial(it.values, it.cond, graph, model.initial));
  return tape.constant(grids_to_rows(fills));
}

}  // namespace

JointLoss joint_loss(const JointModel& model, std::span<const WindowItem> batch, const Graph& graph,
                     const NoiseSchedule& sched, const TrainConfig& config, JointModel* grads) {
  const BatchRows r = flatten(batch, sched);
  if (!(r.target.sum() > 0.0)) throw DataError("joint_loss: batch has no target cells");
  const auto& ab = config.ablation;
  ad::Tape tape;
  const bool train_initial = grads && !ab.freeze_initial;
  InitialVars ivars;
  const Var x_init = initial_fill(tape, model, batch, r, graph, train_initial, &ivars);
  const Var x = tape.constant(r.x);

  const Var diff = ad::sub(x_init, x);
  const Var l_init = config.init_norm == LossNorm::l1 ? ad::weighted_mean_abs(diff, r.target)
                                                      : ad::weighted_mean_square(diff, r.target);

  Var z0m;
  if (ab.no_residual) z0m = tape.constant(-r.x.cwiseProduct(r.target));
  else if (ab.flip_residual_sign) z0m = ad::mul_const(ad::sub(x, x_init), r.target);
  else z0m = ad::mul_const(diff, r.target);

  Var clean = z0m;
  if (!ab.no_cond_forward) clean = ad::add(z0m, ad::mul_const(x_init, r.target));
  const Var z_t = ad::add_const(ad::mul_const(clean, r.sqrt_a.cwiseProduct(r.target)),
                                r.sqrt_1ma.cwiseProduct(r.eps).cwiseProduct(r.target));

  const DenoiserIndex idx = DenoiserIndex::make(r.layout.batch, r.layout.time, r.layout.nodes, r.steps, r.window_index);
  const DenoiserVars dvars = bind(tape, model.denoiser, grads != nullptr);
  const Var pred = denoiser_forward(dvars, model.denoiser.config, z_t, x_init, idx, graph.normalized());
  const Var err = ab.predict_x0 ? ad::sub(pred, z0m) : ad::sub(pred, tape.constant(r.eps));
  const Var l_simple = ad::weighted_mean_square(err, r.target);
  const Var l_joint = ad::add(l_simple, ad::scale(l_init, config.lambda));

  JointLoss out{l_simple.value()(0, 0), l_init.value()(0, 0), l_joint.value()(0, 0)};
  if (grads) {
    tape.backward(l_joint);
    grads->denoiser = DenoiserParams::zeros(model.denoiser.config);
    collect_grads(dvars, grads->denoiser);
    grads->initial = model.initial.zeros_like();
    if (train_initial && model.initial.has_parameters()) collect_grads(ivars, grads->initial);
  }
  return out;
}

void sgd_step(JointModel& model, const JointModel& grads, double lr, bool update_initial) {
  auto p = tensors_of(model.denoiser);
  JointModel& g = const_cast<JointModel&>(grads);
  auto q = tensors_of(g.denoiser);
  for (std::size_t i = 0; i < p.size(); ++i) *p[i] -= lr * *q[i];
  if (!update_initial) return;
  auto pi = tensors_of(model.initial);
  auto qi = tensors_of(g.initial);
  for (std::size_t i = 0; i < pi.size(); ++i) *pi[i] -= lr * *qi[i];
}

namespace {

void shuffle(std::vector<Eigen::Index>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(i) - 1));
    std::swap(v[i - 1], v[j]);
  }
}

double initial_only_loss(const InitialModel& model, std::span<const WindowItem> batch, const Graph& graph,
                         const TrainConfig& config, InitialModel* grads) {
  const NoiseSchedule dummy = NoiseSchedule::from_betas({0.5});
  std::vector<WindowItem> items(batch.begin(), batch.end());
  for (auto& it : items) it.t = 1;
  const BatchRows r = flatten(items, dummy);
  ad::Tape tape;
  const InitialVars vars = bind(tape, model, grads != nullptr);
  const Var x_init = recurrent_impute(vars, tape, r.x, r.cond, r.layout, graph.row_normalized());
  const Var diff = ad::sub(x_init, tape.constant(r.x));
  const Var loss = config.init_norm == LossNorm::l1 ? ad::weighted_mean_abs(diff, r.target)
                                                    : ad::weighted_mean_square(diff, r.target);
  if (grads) {
    tape.backward(loss);
    *grads = model.zeros_like();
    collect_grads(vars, *grads);
  }
  return loss.value()(0, 0);
}

std::vector<Eigen::Index> evenly_spaced(const std::vector<Eigen::Index>& starts, std::size_t count) {
  if (starts.size() <= count) return starts;
  std::vector<Eigen::Index> out;
  for (std::size_t i = 0; i < count; ++i) out.push_back(starts[i * starts.size() / count]);
  return out;
}

}  // namespace

InitialModel pretrain_initial(const MaskedGrid& g, const Graph& graph, const TrainConfig& config, InitialModel model,
                              Rng& rng, PretrainReport* report) {
  if (!model.has_parameters() || config.ablation.skip_pretrain || config.pretrain_epochs == 0) return model;
  TrainConfig c = config;
  c.masking = MaskingMode::out_of_sample;
  auto starts = window_starts(g.time_steps(), c.window, c.window_stride);
  Rng eval_rng = rng.derive(0xe7a1);
  const auto eval_starts = evenly_spaced(starts, 64);
  const auto eval_batch = draw_batch(g, eval_starts, c, eval_rng);

  double best = initial_only_loss(model, eval_batch, graph, c, nullptr);
  PretrainReport rep;
  rep.initial_loss = best;
  rep.eval_loss.push_back(best);
  InitialModel best_model = model;
  Adam adam({c.learning_rate});
  auto params = tensors_of(model);
  for (int epoch = 0; epoch < c.pretrain_epochs; ++epoch) {
    shuffle(starts, rng);
    for (std::size_t b = 0; b < starts.size(); b += static_cast<std::size_t>(c.batch_size)) {
      const std::span<const Eigen::Index> chunk(starts.data() + b, std::min(starts.size() - b, static_cast<std::size_t>(c.batch_size)));
      const auto batch = draw_batch(g, chunk, c, rng);
      InitialModel grads;
      const double loss = initial_only_loss(model, batch, graph, c, &grads);
      if (!std::isfinite(loss)) throw NumericError("pretrain: non-finite initial-stage loss at epoch " + std::to_string(epoch));
      auto gp = tensors_of(grads);
      adam.step(params, std::vector<const Eigen::MatrixXd*>(gp.begin(), gp.end()));
    }
    const double ev = initial_only_loss(model, eval_batch, graph, c, nullptr);
    rep.eval_loss.push_back(ev);
    if (ev < best) {
      best = ev;
      best_model = model;
    }
  }
  rep.best_loss = best;
  if (report) *report = std::move(rep);
  return best_model;
}

TrainResult train_joint(const MaskedGrid& data, const Graph& graph, const TrainConfig& config, const TrainObserver& observer) {
  config.validate();
  data.validate();
  graph.validate();
  if (graph.nodes() != data.nodes()) throw DimensionError("train: graph size differs from the grid");
  if (data.time_steps() < config.window) throw DataError("train: series shorter than one window");
  const Mask visible = data.visible();
  if (!visible.any()) throw DataError("train: no visible cells");
  if (config.masking == MaskingMode::in_sample && !data.eval.any())
    throw DataError("train: in_sample mode needs annotated eval cells");
  for (int w : data.window_index)
    if (w < 0 || w >= config.window) throw DataError("train: window index outside [0, window)");

  TrainResult res;
  Checkpoint& ck = res.checkpoint;
  ck.config = config;
  ck.schedule = NoiseSchedule::linear(config.diffusion_steps, config.beta_min, config.beta_max);
  ck.normalizer = Normalizer::fit(data.values, visible);

  MaskedGrid g = data;
  g.values = data.observed.select(ck.normalizer.apply(data.values), 0.0);

  Rng root(config.seed);
  Rng init_rng = root.derive(1);
  Rng imp_rng = root.derive(2);
  Rng pre_rng = root.derive(3);
  Rng rng = root.derive(4);
  const DenoiserConfig dc{config.d, config.conv_width, config.heads, config.window, static_cast<int>(data.nodes()),
                          config.diffusion_steps};
  JointModel model{DenoiserParams::init(dc, init_rng), InitialModel::make(config.initial, config.initial_hidden, imp_rng)};
  model.initial = pretrain_initial(g, graph, config, model.initial, pre_rng, &res.pretrain);

  const bool update_initial = model.initial.has_parameters() && !config.ablation.freeze_initial;
  auto params = tensors_of(model.denoiser);
  if (update_initial) {
    auto extra = tensors_of(model.initial);
    params.insert(params.end(), extra.begin(), extra.end());
  }
  Adam adam({config.learning_rate});
  auto starts = window_starts(g.time_steps(), config.window, config.window_stride);
  long step = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    shuffle(starts, rng);
    for (std::size_t b = 0; b < starts.size(); b += static_cast<std::size_t>(config.batch_size)) {
      const std::span<const Eigen::Index> chunk(starts.data() + b,
                                                std::min(starts.size() - b, static_cast<std::size_t>(config.batch_size)));
      const auto batch = draw_batch(g, chunk, config, rng);
      bool any_target = false;
      for (const auto& it : batch) any_target = any_target || it.target.any();
      if (!any_target) continue;
      JointModel grads;
      const JointLoss l = joint_loss(model, batch, graph, ck.schedule, config, &grads);
      if (!std::isfinite(l.l_joint))
        throw NumericError("train: non-finite loss at step " + std::to_string(step) + " (L_simple=" +
                           std::to_string(l.l_simple) + ", L_init=" + std::to_string(l.l_init) + ")");
      auto gp = tensors_of(grads.denoiser);
      if (update_initial) {
        auto extra = tensors_of(grads.initial);
        gp.insert(gp.end(), extra.begin(), extra.end());
      }
      adam.step(params, std::vector<const Eigen::MatrixXd*>(gp.begin(), gp.end()));
      LogRow row{++step, l.l_simple, l.l_init, l.l_joint};
      res.log.push_back(row);
      if (observer) observer(row);
    }
  }
  ck.denoiser = std::move(model.denoiser);
  ck.initial = std::move(model.initial);
  return res;
}

void save_train_log(const std::filesystem::path& path, const std::vector<LogRow>& log) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out.precision(17);
  out << "step,L_simple,L_init,L_joint\n";
  for (const auto& r : log) out << r.step << ',' << r.l_simple << ',' << r.l_init << ',' << r.l_joint << '\n';
}

}  // namespace rdpi
