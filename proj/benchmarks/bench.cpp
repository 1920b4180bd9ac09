#include <vector>

#include <benchmark/benchmark.h>

#include "rdpi/data.hpp"
#include "rdpi/denoiser.hpp"
#include "rdpi/rng.hpp"
#include "rdpi/sampler.hpp"
#include "rdpi/schedule.hpp"

using namespace rdpi;

namespace {

Grid noise(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  Grid g(rows, cols);
  for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = rng.normal();
  return g;
}

struct Fixture {
  DenoiserConfig config;
  DenoiserParams params;
  Graph graph;

  explicit Fixture(int nodes) {
    Rng rng(7);
    config.nodes = nodes;
    params = DenoiserParams::init(config, rng);
    graph = synth_generate(7, nodes, config.window).second;
  }
};

void BM_PredictEps(benchmark::State& state) {
  const int nodes = static_cast<int>(state.range(0));
  Fixture f(nodes);
  Rng rng(1);
  const Grid z = noise(f.config.window, nodes, rng), cond = noise(f.config.window, nodes, rng);
  for (auto _ : state) benchmark::DoNotOptimize(predict_eps(f.params, z, cond, 25, f.graph));
}
BENCHMARK(BM_PredictEps)->Arg(10)->Arg(20)->Arg(50)->Unit(benchmark::kMillisecond);

void BM_PredictEpsBatch(benchmark::State& state) {
  const int nodes = 20, batch = static_cast<int>(state.range(0));
  Fixture f(nodes);
  Rng rng(2);
  std::vector<Grid> z, cond;
  std::vector<int> steps(static_cast<std::size_t>(batch), 25);
  std::vector<std::vector<int>> windows(static_cast<std::size_t>(batch));
  for (int b = 0; b < batch; ++b) {
    z.push_back(noise(f.config.window, nodes, rng));
    cond.push_back(noise(f.config.window, nodes, rng));
  }
  const Eigen::MatrixXd a_hat = f.graph.normalized();
  for (auto _ : state) benchmark::DoNotOptimize(predict_eps_batch(f.params, z, cond, steps, windows, a_hat));
  state.SetItemsProcessed(state.iterations() * batch);
}
BENCHMARK(BM_PredictEpsBatch)->Arg(1)->Arg(16)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_LossAndGrads(benchmark::State& state) {
  const int nodes = 20, batch = static_cast<int>(state.range(0));
  Fixture f(nodes);
  Rng rng(3);
  std::vector<DenoiserExample> examples;
  for (int b = 0; b < batch; ++b) {
    DenoiserExample e;
    e.z_t = noise(f.config.window, nodes, rng);
    e.cond = noise(f.config.window, nodes, rng);
    e.t = 1 + b % f.config.steps;
    e.eps = noise(f.config.window, nodes, rng);
    e.target = Mask::Constant(f.config.window, nodes, true);
    examples.push_back(std::move(e));
  }
  for (auto _ : state) benchmark::DoNotOptimize(loss_and_grads(f.params, examples, f.graph));
  state.SetItemsProcessed(state.iterations() * batch);
}
BENCHMARK(BM_LossAndGrads)->Arg(1)->Arg(32)->Unit(benchmark::kMillisecond);

void BM_AncestralStep(benchmark::State& state) {
  const auto sched = NoiseSchedule::linear(50, 1e-4, 0.2);
  Rng rng(4);
  const Eigen::Index L = 24, N = 20;
  ConditionGrid z0c;
  z0c.values = noise(L, N, rng);
  z0c.target = Mask::Constant(L, N, true);
  const Grid z = noise(L, N, rng), eps = noise(L, N, rng);
  for (auto _ : state) benchmark::DoNotOptimize(ancestral_step(z, z0c, 25, eps, sched, rng));
}
BENCHMARK(BM_AncestralStep);

}  // namespace

BENCHMARK_MAIN();
