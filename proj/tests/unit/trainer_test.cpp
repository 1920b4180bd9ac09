#include <gtest/gtest.h>

#include <algorithm>
#include <fstream>
#include <iterator>

#include "helpers.hpp"
#include "rdpi/error.hpp"
#include "rdpi/optim.hpp"
#include "rdpi/trainer.hpp"

namespace rdpi {
namespace {

TrainConfig tiny() {
  TrainConfig c;
  c.diffusion_steps = 10;
  c.epochs = 2;
  c.pretrain_epochs = 2;
  c.batch_size = 4;
  c.window = 8;
  c.window_stride = 4;
  c.d = 8;
  c.heads = 2;
  c.initial_hidden = 4;
  return c;
}

MaskedGrid tiny_data(std::uint64_t seed, Graph* graph, int nodes = 5, int steps = 64) {
  SynthParams p;
  p.steps_per_day = 8;
  auto [grid, g] = synth_generate(seed, nodes, steps, p);
  *graph = g;
  return mask_point(grid, 0.2, seed + 1);
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

TEST(Windows, StartsCoverSeries) {
  EXPECT_EQ(window_starts(24, 24, 12), (std::vector<Eigen::Index>{0}));
  EXPECT_EQ(window_starts(50, 24, 12), (std::vector<Eigen::Index>{0, 12, 24, 26}));
  EXPECT_EQ(window_starts(48, 24, 24), (std::vector<Eigen::Index>{0, 24}));
  EXPECT_THROW(window_starts(10, 24, 12), DataError);
}

TEST(Ablations, ParseAndPrint) {
  const auto a = Ablations::parse("no_cond_forward, predict_x0");
  EXPECT_TRUE(a.no_cond_forward);
  EXPECT_TRUE(a.predict_x0);
  EXPECT_FALSE(a.no_residual);
  EXPECT_EQ(Ablations::parse(a.to_string()).to_string(), a.to_string());
  EXPECT_EQ(Ablations::parse("none").to_string(), Ablations{}.to_string());
  EXPECT_THROW(Ablations::parse("no_everything"), ConfigError);
}

TEST(TrainConfig, JsonRoundTripAndErrors) {
  TrainConfig c = tiny();
  c.lambda = 0.5;
  c.masking = MaskingMode::in_sample;
  c.ablation.freeze_initial = true;
  const auto back = TrainConfig::from_json(c.to_json());
  EXPECT_EQ(back.to_json(), c.to_json());
  EXPECT_THROW(TrainConfig::from_json(R"({"lamda": 0.1})"), ConfigError);
  EXPECT_THROW(TrainConfig::from_json("[1]"), ConfigError);
  c.ablation.no_residual = c.ablation.flip_residual_sign = true;
  EXPECT_THROW(c.validate(), ConfigError);
  c = tiny();
  c.remask_p = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(DrawBatch, OutOfSampleTargetsAreHiddenVisibleCells) {
  Graph g;
  const auto data = tiny_data(1, &g);
  const auto cfg = tiny();
  Rng rng(2);
  const auto starts = window_starts(data.time_steps(), cfg.window, cfg.window_stride);
  const auto batch = draw_batch(data, starts, cfg, rng);
  for (std::size_t k = 0; k < batch.size(); ++k) {
    const Mask vis = data.visible().middleRows(starts[k], cfg.window);
    const auto& it = batch[k];
    EXPECT_TRUE(it.target.any());
    EXPECT_FALSE((it.target && !vis).any());
    EXPECT_FALSE((it.target && it.cond).any());
    EXPECT_FALSE((it.cond && !vis).any());
    EXPECT_GE(it.t, 1);
    EXPECT_LE(it.t, cfg.diffusion_steps);
  }
}

TEST(DrawBatch, InSampleTargetsAreEvalCells) {
  Graph g;
  const auto data = tiny_data(3, &g);
  auto cfg = tiny();
  cfg.masking = MaskingMode::in_sample;
  Rng rng(4);
  const Eigen::Index s = 8;
  const auto batch = draw_batch(data, std::span(&s, 1), cfg, rng);
  EXPECT_TRUE((batch[0].target == data.eval.middleRows(8, cfg.window)).all());
}

TEST(JointLoss, SmallStepDecreasesLoss) {
  std::vector<double> drops;
  for (std::uint64_t seed : {1, 2, 3}) {
    Graph g;
    auto data = tiny_data(seed, &g);
    data.values = data.observed.select(Normalizer::fit(data.values, data.visible()).apply(data.values), 0.0);
    const auto cfg = tiny();
    Rng rng(seed);
    const auto sched = NoiseSchedule::linear(cfg.diffusion_steps, cfg.beta_min, cfg.beta_max);
    JointModel m{DenoiserParams::init({8, 3, 2, 8, 5, 10}, rng), InitialModel::make(InitialStrategy::trainable, 4, rng)};
    const std::vector<Eigen::Index> starts{0, 16, 32};
    const auto batch = draw_batch(data, starts, cfg, rng);
    JointModel grads;
    const auto before = joint_loss(m, batch, g, sched, cfg, &grads);
    EXPECT_NEAR(before.l_joint, before.l_simple + cfg.lambda * before.l_init, 1e-12);
    sgd_step(m, grads, 1e-3, true);
    drops.push_back(before.l_joint - joint_loss(m, batch, g, sched, cfg).l_joint);
  }
  std::sort(drops.begin(), drops.end());
  EXPECT_GT(drops[1], 0.0);
}

TEST(Pretrain, SkipAndNodeMeanAreNoOps) {
  Graph g;
  const auto data = tiny_data(5, &g);
  auto cfg = tiny();
  Rng rng(6);
  const auto m = InitialModel::make(InitialStrategy::trainable, 4, rng);
  cfg.ablation.skip_pretrain = true;
  Rng r1(7);
  const auto same = pretrain_initial(data, g, cfg, m, r1);
  EXPECT_EQ(same.w_comb, m.w_comb);
  EXPECT_EQ(same.forward.w_in, m.forward.w_in);
  cfg.ablation.skip_pretrain = false;
  Rng r2(8);
  const auto nm = InitialModel::make(InitialStrategy::node_mean, 4, r2);
  EXPECT_FALSE(pretrain_initial(data, g, cfg, nm, r2).has_parameters());
}

TEST(Pretrain, ReducesInitialLoss) {
  std::vector<double> ratio;
  for (std::uint64_t seed : {11, 12, 13}) {
    Graph g;
    auto data = tiny_data(seed, &g, 10, 192);
    auto cfg = tiny();
    cfg.pretrain_epochs = 10;
    const auto norm = Normalizer::fit(data.values, data.visible());
    data.values = data.observed.select(norm.apply(data.values), 0.0);
    Rng rng(seed);
    PretrainReport rep;
    (void)pretrain_initial(data, g, cfg, InitialModel::make(InitialStrategy::trainable, 8, rng), rng, &rep);
    ASSERT_EQ(rep.eval_loss.size(), 11u);
    EXPECT_LE(rep.best_loss, rep.initial_loss);
    ratio.push_back(rep.best_loss / rep.initial_loss);
  }
  std::sort(ratio.begin(), ratio.end());
  EXPECT_LT(ratio[1], 1.0);
}

TEST(Train, FrozenInitialUnchangedWithZeroLambda) {
  Graph g;
  const auto data = tiny_data(9, &g);
  auto cfg = tiny();
  cfg.lambda = 0.0;
  cfg.ablation.freeze_initial = true;
  cfg.ablation.skip_pretrain = true;
  const auto res = train_joint(data, g, cfg);
  Rng root(cfg.seed);
  Rng imp = root.derive(2);
  const auto fresh = InitialModel::make(InitialStrategy::trainable, cfg.initial_hidden, imp);
  EXPECT_EQ(res.checkpoint.initial.w_comb, fresh.w_comb);
  EXPECT_EQ(res.checkpoint.initial.backward.w_hh, fresh.backward.w_hh);
  EXPECT_FALSE(res.log.empty());
}

TEST(Train, RejectsBadInputs) {
  Graph g;
  auto data = tiny_data(10, &g);
  auto cfg = tiny();
  cfg.masking = MaskingMode::in_sample;
  auto clean = data;
  clean.eval.setConstant(false);
  EXPECT_THROW(train_joint(clean, g, cfg), DataError);
  cfg = tiny();
  cfg.window = 128;
  EXPECT_THROW(train_joint(data, g, cfg), DataError);
  Graph small{Eigen::MatrixXd::Zero(2, 2)};
  EXPECT_THROW(train_joint(data, small, tiny()), DimensionError);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  Graph g;
  const auto data = tiny_data(14, &g);
  const auto res = train_joint(data, g, tiny());
  const auto dir = test::scratch_dir("ckpt");
  save_checkpoint(dir / "a.bin", res.checkpoint);
  const auto back = load_checkpoint(dir / "a.bin");
  save_checkpoint(dir / "b.bin", back);
  EXPECT_EQ(slurp(dir / "a.bin"), slurp(dir / "b.bin"));
  EXPECT_EQ(back.config.to_json(), res.checkpoint.config.to_json());
  EXPECT_EQ(back.denoiser.spatial.wv, res.checkpoint.denoiser.spatial.wv);
  EXPECT_EQ(back.normalizer.stddev, res.checkpoint.normalizer.stddev);
  EXPECT_TRUE(std::filesystem::exists(dir / "a.bin.json"));
}

TEST(Checkpoint, RejectsCorruptFiles) {
  const auto dir = test::scratch_dir("ckpt_bad");
  std::ofstream(dir / "junk.bin") << "NOTACKPT";
  EXPECT_THROW(load_checkpoint(dir / "junk.bin"), DataError);
  EXPECT_THROW(load_checkpoint(dir / "missing.bin"), DataError);
  Graph g;
  const auto res = train_joint(tiny_data(15, &g), g, tiny());
  save_checkpoint(dir / "ok.bin", res.checkpoint);
  auto bytes = slurp(dir / "ok.bin");
  bytes.resize(bytes.size() - 9);
  std::ofstream(dir / "short.bin", std::ios::binary) << bytes;
  EXPECT_THROW(load_checkpoint(dir / "short.bin"), DataError);
}

TEST(Train, DeterministicUnderSeed) {
  Graph g;
  const auto data = tiny_data(16, &g);
  const auto a = train_joint(data, g, tiny());
  const auto b = train_joint(data, g, tiny());
  const auto dir = test::scratch_dir("det");
  save_checkpoint(dir / "a.bin", a.checkpoint);
  save_checkpoint(dir / "b.bin", b.checkpoint);
  EXPECT_EQ(slurp(dir / "a.bin"), slurp(dir / "b.bin"));
  auto other = tiny();
  other.seed = 1;
  save_checkpoint(dir / "c.bin", train_joint(data, g, other).checkpoint);
  EXPECT_NE(slurp(dir / "a.bin"), slurp(dir / "c.bin"));
}

TEST(Adam, MinimizesQuadratic) {
  Eigen::MatrixXd x = Eigen::MatrixXd::Constant(2, 2, 5.0);
  Adam adam({0.1});
  for (int i = 0; i < 500; ++i) {
    const Eigen::MatrixXd g = 2.0 * x;
    Eigen::MatrixXd* p[] = {&x};
    const Eigen::MatrixXd* gp[] = {&g};
    adam.step(p, gp);
  }
  EXPECT_LT(x.cwiseAbs().maxCoeff(), 1e-2);
  EXPECT_EQ(adam.steps(), 500);
}

}  // namespace
}  // namespace rdpi
