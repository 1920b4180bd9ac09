#include "cli.hpp"

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>

#include "rdpi/audit.hpp"
#include "rdpi/data.hpp"
#include "rdpi/error.hpp"
#include "rdpi/sampler.hpp"
#include "rdpi/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace rdpi::cli {
namespace {

const char* const kTrainKeys[] = {"diffusion_steps", "beta_min",       "beta_max", "lambda",   "learning_rate",
                                  "epochs",          "pretrain_epochs", "batch_size", "window", "window_stride",
                                  "masking",         "remask_p",       "initial",  "initial_hidden", "init_norm",
                                  "d",               "conv_width",     "heads",    "ablation"};

const char* const kSubcommands[] = {"synth", "mask", "pretrain", "train", "impute", "eval", "verify", "sweep"};

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw ConfigError("cannot read " + p.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw DataError("cannot write " + p.string());
  out << text;
  if (!out) throw DataError("write failed: " + p.string());
}

/// Coerces a raw flag token to the JSON type of `like`.
json coerce(const std::string& key, const std::string& raw, const json& like) {
  if (like.is_string()) return raw;
  json v;
  try {
    v = json::parse(raw);
  } catch (const json::exception&) {
    if (like.is_array()) {
      // comma list: 1,2,3
      json arr = json::array();
      std::stringstream ss(raw);
      std::string tok;
      while (std::getline(ss, tok, ',')) {
        try {
          arr.push_back(json::parse(tok));
        } catch (const json::exception&) {
          arr.push_back(tok);
        }
      }
      return arr;
    }
    throw ConfigError("--" + key + ": cannot parse '" + raw + "'");
  }
  if (like.is_array() && !v.is_array()) v = json::array({v});
  return v;
}

bool same_kind(const json& a, const json& b) {
  if (a.is_number() && b.is_number()) return !(a.is_number_integer() || a.is_number_unsigned()) || b.is_number_integer() || b.is_number_unsigned();
  return a.type() == b.type();
}

TrainConfig train_config(const json& c) {
  json t;
  for (const char* k : kTrainKeys) t[k] = c.at(k);
  t["seed"] = c.at("seed");
  auto cfg = TrainConfig::from_json(t.dump());
  cfg.validate();
  return cfg;
}

ImputeOptions impute_options(const json& c) {
  ImputeOptions o;
  const auto s = c.at("sampler").get<std::string>();
  if (s == "ancestral") o.sampler = SamplerKind::ancestral;
  else if (s == "ddim") o.sampler = SamplerKind::ddim;
  else throw ConfigError("sampler must be ancestral or ddim");
  const auto f = c.at("posterior_form").get<std::string>();
  if (f == "stepwise") o.form = PosteriorForm::stepwise;
  else if (f == "marginal_consistent") o.form = PosteriorForm::marginal_consistent;
  else throw ConfigError("posterior_form must be stepwise or marginal_consistent");
  o.samples = c.at("samples").get<int>();
  o.accelerate_steps = c.at("accelerate_steps").get<int>();
  o.eta = c.at("eta").get<double>();
  o.seed = c.at("seed").get<std::uint64_t>();
  o.lower_q = c.at("lower_q").get<double>();
  o.upper_q = c.at("upper_q").get<double>();
  o.max_batch = c.at("max_batch").get<int>();
  o.validate();
  return o;
}

fs::path required_path(const json& c, const char* key) {
  const auto s = c.at(key).get<std::string>();
  if (s.empty()) throw ConfigError(std::string("--") + key + " is required");
  return s;
}

std::pair<MaskedGrid, Graph> load_data(const json& c) {
  return load_dataset(required_path(c, "data"), {c.at("window_period").get<int>()});
}

json metrics_json(const Metrics& m) { return {{"mae", m.mae}, {"mse", m.mse}, {"mre", m.mre}, {"cells", m.cells}}; }

/// Output directory written through a sibling staging directory, so a failed
/// run leaves nothing behind.
class Staging {
 public:
  explicit Staging(fs::path final_dir) : final_(std::move(final_dir)) {
    if (final_.filename().empty()) final_ = final_.parent_path();
    stage_ = final_.parent_path() / ("." + final_.filename().string() + ".partial");
    fs::remove_all(stage_);
    fs::create_directories(stage_);
  }
  Staging(const Staging&) = delete;
  Staging& operator=(const Staging&) = delete;
  ~Staging() {
    std::error_code ec;
    if (!committed_) fs::remove_all(stage_, ec);
  }

  [[nodiscard]] const fs::path& dir() const { return stage_; }

  void commit() {
    fs::create_directories(final_);
    for (const auto& e : fs::directory_iterator(stage_)) {
      const fs::path dst = final_ / e.path().filename();
      fs::remove_all(dst);
      fs::rename(e.path(), dst);
    }
    fs::remove_all(stage_);
    committed_ = true;
  }

 private:
  fs::path final_;
  fs::path stage_;
  bool committed_ = false;
};

void echo_config(const fs::path& dir, const json& c) { write_file(dir / "config.json", c.dump(2) + "\n"); }

std::vector<int> resolve_nodes(const MaskedGrid& g, const json& ids) {
  std::vector<int> out;
  for (const auto& v : ids) {
    const std::string id = v.is_string() ? v.get<std::string>() : v.dump();
    const auto it = std::find(g.node_ids.begin(), g.node_ids.end(), id);
    if (it == g.node_ids.end()) throw IndexError("mask: unknown node id " + id);
    out.push_back(static_cast<int>(it - g.node_ids.begin()));
  }
  return out;
}

// ---- subcommands -------------------------------------------------------------

json cmd_synth(const json& c, const fs::path& dir) {
  SynthParams p;
  p.steps_per_day = c.at("window_period").get<int>();
  const int nodes = c.at("nodes").get<int>(), steps = c.at("time_steps").get<int>();
  if (nodes < 1 || steps < 1) throw ConfigError("nodes and time_steps must be >= 1");
  auto [grid, graph] = synth_generate(c.at("seed").get<std::uint64_t>(), nodes, steps, p);
  save_dataset(dir, grid, graph);
  return {{"nodes", nodes}, {"time_steps", steps}, {"edges", (graph.adjacency.array() > 0.0).count() / 2}};
}

json cmd_mask(const json& c, const fs::path& dir) {
  auto [grid, graph] = load_data(c);
  const auto mode = c.at("mask").get<std::string>();
  const auto seed = c.at("seed").get<std::uint64_t>();
  MaskedGrid out;
  if (mode == "point") {
    out = mask_point(grid, c.at("mask_p").get<double>(), seed);
  } else if (mode == "block") {
    BlockMaskParams p;
    p.p_point = c.at("p_point").get<double>();
    p.p_block = c.at("p_block").get<double>();
    p.min_hours = c.at("min_hours").get<double>();
    p.max_hours = c.at("max_hours").get<double>();
    p.steps_per_hour = c.at("steps_per_hour").get<double>();
    out = mask_block(grid, p, seed);
  } else if (mode == "node") {
    out = mask_node(grid, resolve_nodes(grid, c.at("mask_nodes")));
  } else {
    throw ConfigError("mask must be point, block or node");
  }
  save_dataset(dir, out, graph);
  return {{"mode", mode}, {"eval_cells", out.eval.count()}, {"observed_cells", out.observed.count()}};
}

void write_pretrain_log(const fs::path& p, const PretrainReport& r) {
  std::ostringstream s;
  s << "epoch,eval_loss\n" << std::setprecision(17);
  for (std::size_t i = 0; i < r.eval_loss.size(); ++i) s << i << ',' << r.eval_loss[i] << '\n';
  write_file(p, s.str());
}

json cmd_train(const json& c, const fs::path& dir, bool pretrain_only) {
  auto [grid, graph] = load_data(c);
  TrainConfig cfg = train_config(c);
  if (pretrain_only) cfg.epochs = 0;
  const auto res = train_joint(grid, graph, cfg);
  save_checkpoint(dir / "checkpoint.bin", res.checkpoint);
  if (!pretrain_only) save_train_log(dir / "train_log.csv", res.log);
  write_pretrain_log(dir / "pretrain_log.csv", res.pretrain);
  json j{{"steps", res.log.size()}, {"pretrain_best_loss", res.pretrain.best_loss}};
  if (!res.log.empty()) j["final_l_joint"] = res.log.back().l_joint;
  return j;
}

json cmd_impute(const json& c, const fs::path& dir) {
  auto [grid, graph] = load_data(c);
  const Checkpoint ck = load_checkpoint(required_path(c, "checkpoint"));
  const ImputeOptions opt = impute_options(c);
  const auto res = impute(ck, grid, graph, opt);
  save_imputation(dir, res, grid, opt, c.at("write_samples").get<bool>());
  json j{{"imputed_cells", res.target.count()}};
  if (res.metrics) j["metrics"] = metrics_json(*res.metrics);
  if (res.coverage) j["coverage"] = *res.coverage;
  return j;
}

json cmd_eval(const json& c, const fs::path& dir) {
  auto [grid, graph] = load_data(c);
  const fs::path imp = required_path(c, "imputation");
  const CsvOptions opts{c.at("window_period").get<int>()};
  auto read = [&](const char* name) {
    const auto g = load_grid_csv(imp / name, std::nullopt, std::nullopt, opts);
    if (g.values.rows() != grid.values.rows() || g.values.cols() != grid.values.cols())
      throw DimensionError(std::string(name) + ": shape differs from the dataset");
    if (!(g.observed || !grid.eval).all()) throw DataError(std::string(name) + ": missing values on eval cells");
    return g;
  };
  if (!grid.eval.any()) throw DataError("eval: dataset has no eval cells");
  json j;
  const auto median = read("median.csv");
  j["median"] = metrics_json(metrics(median.values, grid.values, grid.eval));
  if (fs::exists(imp / "initial.csv")) j["initial"] = metrics_json(metrics(read("initial.csv").values, grid.values, grid.eval));
  if (fs::exists(imp / "lower.csv") && fs::exists(imp / "upper.csv")) {
    const Grid lo = read("lower.csv").values, hi = read("upper.csv").values;
    const Mask in = grid.values.array() >= lo.array() && grid.values.array() <= hi.array();
    j["coverage"] = static_cast<double>((in && grid.eval).count()) / static_cast<double>(grid.eval.count());
  }
  write_file(dir / "metrics.json", j.dump(2) + "\n");
  return j;
}

json cmd_verify(const json& c, const fs::path* dir, std::ostream& out) {
  audit::Options o;
  o.seed = c.at("seed").get<std::uint64_t>();
  o.substitution_tuples = c.at("audit_tuples").get<int>();
  o.mc_draws = c.at("audit_draws").get<int>();
  o.pushforward_chains = c.at("audit_chains").get<int>();
  if (o.substitution_tuples < 1 || o.mc_draws < 2 || o.pushforward_chains < 2) throw ConfigError("audit sizes too small");
  const auto rep = audit::run(o);
  if (dir) write_file(*dir / "verify.json", rep.to_json() + "\n");
  for (const auto& ch : rep.checks)
    out << (ch.passed ? "PASS " : "FAIL ") << ch.name << " residual=" << ch.residual << " tol=" << ch.tolerance
        << (ch.detail.empty() ? "" : " (" + ch.detail + ")") << '\n';
  if (!rep.all_passed()) throw NumericError("verify: one or more audits failed");
  return {{"checks", rep.checks.size()}, {"all_passed", true}};
}

json cmd_sweep(const json& c, const fs::path& dir) {
  auto [grid, graph] = load_data(c);
  if (!grid.eval.any()) throw DataError("sweep: dataset has no eval cells");
  std::ostringstream csv;
  csv << "diffusion_steps,lambda,sampler,accelerate_steps,mae,mse,mre,coverage\n" << std::setprecision(17);
  int rows = 0;
  for (const auto& T : c.at("sweep_steps"))
    for (const auto& lam : c.at("sweep_lambda")) {
      json cc = c;
      cc["diffusion_steps"] = T;
      cc["lambda"] = lam;
      const auto res = train_joint(grid, graph, train_config(cc));
      ImputeOptions opt = impute_options(cc);
      auto emit = [&](const char* sampler, int K) {
        const auto r = impute(res.checkpoint, grid, graph, opt);
        csv << T.get<int>() << ',' << lam.get<double>() << ',' << sampler << ',' << K << ',' << r.metrics->mae << ','
            << r.metrics->mse << ',' << r.metrics->mre << ',' << *r.coverage << '\n';
        ++rows;
      };
      opt.sampler = SamplerKind::ancestral;
      emit("ancestral", T.get<int>());
      opt.sampler = SamplerKind::ddim;
      for (const auto& K : c.at("sweep_accelerate"))
        if (K.get<int>() <= T.get<int>()) {
          opt.accelerate_steps = K.get<int>();
          emit("ddim", K.get<int>());
        }
    }
  write_file(dir / "sweep.csv", csv.str());
  return {{"rows", rows}};
}

std::string usage() {
  std::string s = "usage: rdpi <subcommand> [--config FILE] [--seed N] [--out DIR] [--key value ...]\nsubcommands:";
  for (const char* k : kSubcommands) s += std::string(" ") + k;
  return s + "\n";
}

}  // namespace

json default_config() {
  json c = json::parse(TrainConfig{}.to_json());
  c.update(json{
      {"data", ""},
      {"out", ""},
      {"checkpoint", ""},
      {"imputation", ""},
      {"seed", 0},
      {"window_period", 24},
      // synth
      {"nodes", 20},
      {"time_steps", 2000},
      // mask
      {"mask", "point"},
      {"mask_p", 0.25},
      {"p_point", 0.05},
      {"p_block", 0.0015},
      {"min_hours", 1.0},
      {"max_hours", 4.0},
      {"steps_per_hour", 1.0},
      {"mask_nodes", json::array()},
      // impute
      {"sampler", "ancestral"},
      {"samples", 50},
      {"accelerate_steps", 10},
      {"eta", 1.0},
      {"posterior_form", "marginal_consistent"},
      {"lower_q", 0.05},
      {"upper_q", 0.95},
      {"max_batch", 64},
      {"write_samples", true},
      // sweep
      {"sweep_steps", {25, 50}},
      {"sweep_lambda", {0.1, 0.2, 0.5}},
      {"sweep_accelerate", {5, 10}},
      // verify
      {"audit_tuples", 10000},
      {"audit_draws", 100000},
      {"audit_chains", 100000},
  });
  return c;
}

json merge_config(json base, const json& overrides) {
  if (!overrides.is_object()) throw ConfigError("config must be a JSON object");
  for (auto it = overrides.begin(); it != overrides.end(); ++it) {
    if (!base.contains(it.key())) throw ConfigError("unknown config key '" + it.key() + "'");
    json v = it.value();
    const json& like = base[it.key()];
    if (v.is_string() && !like.is_string()) v = coerce(it.key(), v.get<std::string>(), like);
    if (!same_kind(like, v)) throw ConfigError("config key '" + it.key() + "' has the wrong type");
    base[it.key()] = v;
  }
  return base;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  auto fail = [&](int code, const char* kind, const std::string& msg) {
    err << json{{"error", {{"kind", kind}, {"message", msg}, {"exit_code", code}}}}.dump() << '\n';
    return code;
  };
  if (args.empty()) {
    err << usage();
    return 2;
  }
  const std::string sub = args[0];
  if (std::find(std::begin(kSubcommands), std::end(kSubcommands), sub) == std::end(kSubcommands)) {
    err << "unknown subcommand '" << sub << "'\n" << usage();
    return 2;
  }

  CLI::App app{"rdpi " + sub};
  app.allow_extras();
  std::string config_path, out_dir, ablation, sampler;
  std::optional<std::uint64_t> seed;
  std::optional<int> samples, accelerate;
  app.add_option("--config", config_path, "JSON run config");
  app.add_option("--seed", seed, "root seed");
  app.add_option("--out", out_dir, "output directory");
  app.add_option("--samples", samples, "imputation samples");
  app.add_option("--accelerate-steps", accelerate, "accelerated sampler steps");
  app.add_option("--ablation", ablation, "comma-separated ablation flags");
  app.add_option("--sampler", sampler, "ancestral or ddim")->check(CLI::IsMember({"ancestral", "ddim"}));

  try {
    std::vector<std::string> rest(args.begin() + 1, args.end());
    std::reverse(rest.begin(), rest.end());
    app.parse(rest);

    json flags = json::object();
    const auto extra = app.remaining();
    for (std::size_t i = 0; i < extra.size(); ++i) {
      const std::string& tok = extra[i];
      if (tok.rfind("--", 0) != 0 || tok.size() < 3) throw ConfigError("unexpected argument '" + tok + "'");
      std::string key = tok.substr(2), value;
      if (const auto eq = key.find('='); eq != std::string::npos) {
        value = key.substr(eq + 1);
        key = key.substr(0, eq);
      } else {
        if (i + 1 >= extra.size()) throw ConfigError("missing value for " + tok);
        value = extra[++i];
      }
      std::replace(key.begin(), key.end(), '-', '_');
      flags[key] = value;
    }
    if (seed) flags["seed"] = *seed;
    if (!out_dir.empty()) flags["out"] = out_dir;
    if (samples) flags["samples"] = *samples;
    if (accelerate) flags["accelerate_steps"] = *accelerate;
    if (!ablation.empty()) flags["ablation"] = ablation;
    if (!sampler.empty()) flags["sampler"] = sampler;

    json cfg = default_config();
    if (!config_path.empty()) {
      json file;
      try {
        file = json::parse(read_file(config_path));
      } catch (const json::exception& e) {
        throw ConfigError(config_path + ": " + e.what());
      }
      cfg = merge_config(cfg, file);
    }
    cfg = merge_config(cfg, flags);
    cfg["ablation"] = Ablations::parse(cfg["ablation"].get<std::string>()).to_string();
    if (sub != "synth" && sub != "verify") train_config(cfg);
    if (sub == "impute" || sub == "sweep") impute_options(cfg);

    const auto t0 = std::chrono::steady_clock::now();
    json summary;
    if (sub == "verify" && cfg["out"].get<std::string>().empty()) {
      summary = cmd_verify(cfg, nullptr, out);
    } else {
      Staging stage(required_path(cfg, "out"));
      echo_config(stage.dir(), cfg);
      const fs::path& d = stage.dir();
      if (sub == "synth") summary = cmd_synth(cfg, d);
      else if (sub == "mask") summary = cmd_mask(cfg, d);
      else if (sub == "pretrain") summary = cmd_train(cfg, d, true);
      else if (sub == "train") summary = cmd_train(cfg, d, false);
      else if (sub == "impute") summary = cmd_impute(cfg, d);
      else if (sub == "eval") summary = cmd_eval(cfg, d);
      else if (sub == "verify") summary = cmd_verify(cfg, &d, out);
      else summary = cmd_sweep(cfg, d);
      stage.commit();
    }
    summary["subcommand"] = sub;
    summary["seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    out << summary.dump() << '\n';
    return 0;
  } catch (const CLI::ParseError& e) {
    return fail(2, "config", e.what());
  } catch (const Error& e) {
    return fail(e.exit_code(), e.kind(), e.what());
  } catch (const json::exception& e) {
    return fail(2, "config", e.what());
  } catch (const fs::filesystem_error& e) {
    return fail(3, "data", e.what());
  } catch (const std::exception& e) {
    return fail(1, "internal", e.what());
  }
}

}  // namespace rdpi::cli
