#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "cli.hpp"
#include "helpers.hpp"

namespace rdpi {
namespace {

namespace fs = std::filesystem;

struct Run {
  int code;
  std::string out, err;
};

Run call(std::vector<std::string> args) {
  std::ostringstream o, e;
  const int code = cli::run(args, o, e);
  return {code, o.str(), e.str()};
}

nlohmann::json read_json(const fs::path& p) {
  std::ifstream in(p);
  return nlohmann::json::parse(in);
}

TEST(Cli, UnknownSubcommand) {
  const auto r = call({"frobnicate"});
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.err.find("usage"), std::string::npos);
  EXPECT_EQ(call({}).code, 2);
}

TEST(Cli, ConfigErrors) {
  const auto d = test::scratch_dir("cli_cfg");
  EXPECT_EQ(call({"synth", "--out", (d / "a").string(), "--no_such_key", "1"}).code, 2);
  EXPECT_EQ(call({"synth", "--out", (d / "a").string(), "--nodes", "abc"}).code, 2);
  EXPECT_EQ(call({"synth", "--out", (d / "a").string(), "--config", (d / "missing.json").string()}).code, 2);
  EXPECT_EQ(call({"synth"}).code, 2);
  EXPECT_EQ(call({"impute", "--sampler", "euler", "--out", (d / "a").string()}).code, 2);
  EXPECT_FALSE(fs::exists(d / "a"));
}

TEST(Cli, MergeCoercesTypes) {
  auto c = cli::merge_config(cli::default_config(), {{"lambda", "0.5"}, {"sweep_steps", "10,20"}, {"data", "123"}});
  EXPECT_EQ(c["lambda"], 0.5);
  EXPECT_EQ(c["sweep_steps"], nlohmann::json::array({10, 20}));
  EXPECT_EQ(c["data"], "123");
  EXPECT_THROW(cli::merge_config(cli::default_config(), {{"epochs", 1.5}}), std::exception);
}

TEST(Cli, PipelineProducesArtifacts) {
  const auto d = test::scratch_dir("cli_pipe");
  const std::string raw = (d / "raw").string(), masked = (d / "masked").string(), run = (d / "run").string(),
                    imp = (d / "imp").string(), ev = (d / "eval").string();
  ASSERT_EQ(call({"synth", "--out", raw, "--nodes", "4", "--time_steps", "96", "--seed", "2"}).code, 0);
  ASSERT_EQ(call({"mask", "--data", raw, "--out", masked, "--mask_p", "0.2"}).code, 0);
  const std::vector<std::string> small{"--epochs", "1", "--pretrain_epochs", "1", "--d", "8", "--heads", "2",
                                       "--diffusion_steps", "6", "--initial_hidden", "4"};
  std::vector<std::string> train{"train", "--data", masked, "--out", run};
  train.insert(train.end(), small.begin(), small.end());
  ASSERT_EQ(call(train).code, 0);
  EXPECT_TRUE(fs::exists(d / "run" / "checkpoint.bin"));
  EXPECT_TRUE(fs::exists(d / "run" / "train_log.csv"));
  const auto cfg = read_json(d / "run" / "config.json");
  EXPECT_EQ(cfg["epochs"], 1);
  EXPECT_EQ(cfg["seed"], 0);

  std::vector<std::string> impute{"impute", "--data", masked, "--checkpoint", run + "/checkpoint.bin", "--out", imp,
                                  "--samples", "3", "--sampler", "ddim", "--accelerate-steps", "3"};
  ASSERT_EQ(call(impute).code, 0);
  EXPECT_TRUE(fs::exists(d / "imp" / "samples" / "sample_2.csv"));
  EXPECT_EQ(read_json(d / "imp" / "summary.json")["step_count"], 3);

  ASSERT_EQ(call({"eval", "--data", masked, "--imputation", imp, "--out", ev}).code, 0);
  const auto m = read_json(d / "eval" / "metrics.json");
  EXPECT_TRUE(m["median"]["mae"].is_number());
  EXPECT_GT(m["median"]["mae"].get<double>(), 0.0);
  EXPECT_TRUE(m.contains("coverage"));

  // A failing run leaves no partial output behind.
  const auto bad = call({"impute", "--data", masked, "--checkpoint", raw + "/values.csv", "--out", (d / "bad").string()});
  EXPECT_EQ(bad.code, 3);
  EXPECT_FALSE(fs::exists(d / "bad"));
  EXPECT_NE(bad.err.find("\"error\""), std::string::npos);
}

TEST(Cli, ConfigFileAndOverridePrecedence) {
  const auto d = test::scratch_dir("cli_file");
  std::ofstream(d / "c.json") << R"({"nodes": 3, "time_steps": 30, "seed": 4})";
  ASSERT_EQ(call({"synth", "--config", (d / "c.json").string(), "--out", (d / "o").string(), "--time_steps", "40"}).code, 0);
  const auto c = read_json(d / "o" / "config.json");
  EXPECT_EQ(c["nodes"], 3);
  EXPECT_EQ(c["time_steps"], 40);
  EXPECT_EQ(c["seed"], 4);
}

TEST(Cli, VerifyPasses) {
  const auto d = test::scratch_dir("cli_verify");
  const auto r = call({"verify", "--out", (d / "v").string(), "--audit_chains", "20000", "--audit_draws", "20000"});
  EXPECT_EQ(r.code, 0) << r.out << r.err;
  const auto rep = read_json(d / "v" / "verify.json");
  EXPECT_TRUE(rep["all_passed"].get<bool>());
  EXPECT_GE(rep["checks"].size(), 10u);
}

}  // namespace
}  // namespace rdpi
