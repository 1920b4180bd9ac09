#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <iterator>

#include "helpers.hpp"
#include "rdpi/data.hpp"
#include "rdpi/error.hpp"
#include "rdpi/rng.hpp"

namespace rdpi {
namespace {

namespace fs = std::filesystem;

void write(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

const char* kAdj = "node,a,b\na,0,1\nb,1,0\n";

TEST(Csv, AllObservedWithoutMask) {
  const auto d = test::scratch_dir("csv_obs");
  write(d / "v.csv", "timestamp,a,b\nt0,1,2\nt1,3,4\nt2,5,6\n");
  const auto g = load_grid_csv(d / "v.csv", std::nullopt, std::nullopt, {});
  EXPECT_EQ(g.time_steps(), 3);
  EXPECT_EQ(g.nodes(), 2);
  EXPECT_TRUE(g.observed.all());
  EXPECT_FALSE(g.eval.any());
  EXPECT_EQ(g.values(2, 1), 6.0);
  EXPECT_EQ(g.node_ids, (std::vector<std::string>{"a", "b"}));
  EXPECT_EQ(g.window_index, (std::vector<int>{0, 1, 2}));
}

TEST(Csv, MissingTokensAreUnobserved) {
  const auto d = test::scratch_dir("csv_nan");
  write(d / "v.csv", "timestamp,a,b\nt0,NaN,2\nt1,3,\nt2,nan,NA\n");
  const auto g = load_grid_csv(d / "v.csv", std::nullopt, std::nullopt, {});
  EXPECT_FALSE(g.observed(0, 0));
  EXPECT_FALSE(g.observed(1, 1));
  EXPECT_FALSE(g.observed(2, 1));
  EXPECT_TRUE(g.observed(0, 1));
  EXPECT_EQ(g.observed.count(), 2);
}

TEST(Csv, RoundTripIsBitExact) {
  const auto d = test::scratch_dir("csv_rt");
  write(d / "v.csv", "timestamp,a,b\n2024-01-01 00:00,0.1,-3.25e-7\n2024-01-01 01:00,1e300,\n2024-01-01 02:00,7,8.000000000000002\n");
  write(d / "adj.csv", kAdj);
  const auto [g, a] = load_csv({d / "v.csv", std::nullopt, std::nullopt, d / "adj.csv"}, {});
  save_dataset(d / "out", g, a);
  const auto [h, b] = load_dataset(d / "out", {});
  EXPECT_EQ(h.timestamps, g.timestamps);
  EXPECT_TRUE((h.observed == g.observed).all());
  for (Eigen::Index i = 0; i < 3; ++i)
    for (Eigen::Index j = 0; j < 2; ++j)
      if (g.observed(i, j)) EXPECT_EQ(h.values(i, j), g.values(i, j));
  EXPECT_EQ(b.adjacency, a.adjacency);
  save_dataset(d / "out2", h, b);
  EXPECT_EQ(slurp(d / "out" / "values.csv"), slurp(d / "out2" / "values.csv"));
}

TEST(Csv, Errors) {
  const auto d = test::scratch_dir("csv_err");
  write(d / "ragged.csv", "timestamp,a,b\nt0,1\n");
  EXPECT_THROW(load_grid_csv(d / "ragged.csv", std::nullopt, std::nullopt, {}), DataError);
  write(d / "bad.csv", "timestamp,a\nt0,abc\n");
  EXPECT_THROW(load_grid_csv(d / "bad.csv", std::nullopt, std::nullopt, {}), DataError);
  EXPECT_THROW(load_grid_csv(d / "none.csv", std::nullopt, std::nullopt, {}), DataError);
  write(d / "v.csv", "timestamp,a,b\nt0,1,2\n");
  write(d / "m.csv", "timestamp,a,b\nt0,1,2\n");
  EXPECT_THROW(load_grid_csv(d / "v.csv", d / "m.csv", std::nullopt, {}), DataError);
  write(d / "adj.csv", "node,a,b\na,0,1\nb,2,0\n");
  EXPECT_THROW(load_adjacency_csv(d / "adj.csv", {"a", "b"}), DataError);
  write(d / "adj2.csv", kAdj);
  EXPECT_THROW(load_adjacency_csv(d / "adj2.csv", {"a", "c"}), DataError);
}

TEST(Synth, DeterministicAndWellFormed) {
  const auto [g1, a1] = synth_generate(5, 8, 100);
  const auto [g2, a2] = synth_generate(5, 8, 100);
  EXPECT_EQ(g1.values, g2.values);
  EXPECT_EQ(a1.adjacency, a2.adjacency);
  EXPECT_TRUE(g1.observed.all());
  EXPECT_TRUE(a1.adjacency.isApprox(a1.adjacency.transpose()));
  EXPECT_EQ(a1.adjacency.diagonal().cwiseAbs().maxCoeff(), 0.0);
  for (Eigen::Index i = 0; i < 8; ++i) EXPECT_GT(a1.adjacency.row(i).sum(), 0.0);
  EXPECT_NE(synth_generate(6, 8, 100).first.values, g1.values);
}

double pearson(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  const Eigen::ArrayXd x = a.array() - a.mean(), y = b.array() - b.mean();
  return (x * y).sum() / std::sqrt((x * x).sum() * (y * y).sum());
}

TEST(Synth, NeighboursCorrelateMore) {
  const auto [g, a] = synth_generate(0, 20, 2000);
  double near = 0.0, far = 0.0;
  int nn = 0, nf = 0;
  for (Eigen::Index i = 0; i < 20; ++i)
    for (Eigen::Index j = i + 1; j < 20; ++j) {
      const double r = pearson(g.values.col(i), g.values.col(j));
      if (a.adjacency(i, j) > 0.0) near += r, ++nn;
      else far += r, ++nf;
    }
  ASSERT_GT(nn, 0);
  ASSERT_GT(nf, 0);
  EXPECT_GT(near / nn - far / nf, 0.1);
}

TEST(Masks, PointFractionAndDeterminism) {
  const auto [g, a] = synth_generate(1, 20, 1000);
  const auto m = mask_point(g, 0.25, 3);
  const double n = static_cast<double>(g.observed.count());
  const double sd = std::sqrt(n * 0.25 * 0.75);
  EXPECT_LT(std::abs(static_cast<double>(m.eval.count()) - 0.25 * n), 3.0 * sd);
  EXPECT_TRUE((mask_point(g, 0.25, 3).eval == m.eval).all());
  EXPECT_EQ(m.values, g.values);
  EXPECT_FALSE(mask_point(g, 0.0, 3).eval.any());
  EXPECT_THROW(mask_point(g, 1.5, 3), ConfigError);
}

TEST(Masks, PointIsOrderIndependent) {
  // The same cell draws the same decision regardless of the grid around it.
  const auto [g, a] = synth_generate(2, 6, 50);
  MaskedGrid head = g;
  head.values = g.values.topRows(30);
  head.observed = g.observed.topRows(30);
  head.eval = g.eval.topRows(30);
  head.timestamps.resize(30);
  head.window_index.resize(30);
  EXPECT_TRUE((mask_point(head, 0.3, 9).eval == mask_point(g, 0.3, 9).eval.topRows(30)).all());
}

TEST(Masks, BlockWithoutBlocksIsPoint) {
  const auto [g, a] = synth_generate(3, 10, 300);
  BlockMaskParams p;
  p.p_block = 0.0;
  EXPECT_TRUE((mask_block(g, p, 4).eval == mask_point(g, 0.05, 4).eval).all());
}

TEST(Masks, BlockLengthsInRange) {
  const auto [g, a] = synth_generate(4, 10, 2000);
  BlockMaskParams p;
  p.p_point = 0.0;
  p.p_block = 0.01;
  p.min_hours = 2;
  p.max_hours = 5;
  const auto m = mask_block(g, p, 5);
  int runs = 0;
  for (Eigen::Index n = 0; n < 10; ++n) {
    Eigen::Index len = 0;
    for (Eigen::Index t = 0; t <= 2000; ++t) {
      if (t < 2000 && m.eval(t, n)) {
        ++len;
      } else if (len > 0) {
        EXPECT_GE(len, 2);
        EXPECT_LE(len, 5);
        ++runs;
        len = 0;
      }
    }
  }
  EXPECT_GT(runs, 50);
}

TEST(Masks, Node) {
  const auto [g, a] = synth_generate(5, 4, 24);
  const auto m = mask_node(g, {2});
  EXPECT_TRUE(m.eval.col(2).all());
  EXPECT_EQ(m.eval.count(), 24);
  EXPECT_FALSE(mask_node(g, {}).eval.any());
  EXPECT_THROW(mask_node(g, {0, 1, 2, 3}), ConfigError);
  EXPECT_THROW(mask_node(g, {4}), IndexError);
}

TEST(Metrics, Values) {
  const Grid x = (Grid(1, 2) << 2, 100).finished();
  Mask m = test::all(1, 2);
  m(0, 1) = false;
  const auto r = metrics((Grid(1, 2) << 1, -5).finished(), x, m);
  EXPECT_DOUBLE_EQ(r.mae, 1.0);
  EXPECT_DOUBLE_EQ(r.mse, 1.0);
  EXPECT_DOUBLE_EQ(r.mre, 0.5);
  EXPECT_EQ(r.cells, 1);
  const auto z = metrics(x, x, test::all(1, 2));
  EXPECT_EQ(z.mae, 0.0);
  EXPECT_EQ(z.mre, 0.0);
  EXPECT_THROW(metrics(x, x, Mask::Constant(1, 2, false)), DataError);
  EXPECT_THROW(metrics(x, Grid::Zero(1, 2), test::all(1, 2)), DataError);
}

TEST(Normalizer, GuardAndRoundTrip) {
  Rng rng(6);
  Grid x = 5.0 + 3.0 * rng.normal_grid(50, 3).array();
  x.col(1).setConstant(4.0);
  Mask cells = test::all(50, 3);
  cells(0, 0) = false;
  const auto z = Normalizer::fit(x, cells);
  EXPECT_EQ(z.stddev(1), 1.0);
  const Grid n = z.apply(x);
  EXPECT_EQ(n.col(1).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_LT((z.invert(n) - x).cwiseAbs().maxCoeff(), 1e-12);
  for (Eigen::Index j : {0, 2}) {
    double s = 0.0, ss = 0.0, k = 0.0;
    for (Eigen::Index i = 0; i < 50; ++i)
      if (cells(i, j)) s += n(i, j), ss += n(i, j) * n(i, j), k += 1.0;
    EXPECT_NEAR(s / k, 0.0, 1e-9);
    EXPECT_NEAR(ss / k, 1.0, 1e-9);
  }
}

TEST(Graph, NormalizedAdjacency) {
  const auto g = test::line3();
  const auto a = g.normalized();
  // degrees of A + I: 2, 3, 2
  EXPECT_NEAR(a(0, 0), 0.5, 1e-15);
  EXPECT_NEAR(a(0, 1), 1.0 / std::sqrt(6.0), 1e-15);
  EXPECT_NEAR(a(1, 1), 1.0 / 3.0, 1e-15);
  EXPECT_EQ(a(0, 2), 0.0);
  EXPECT_NEAR(g.row_normalized()(1, 0), 0.5, 1e-15);
  Graph bad{Eigen::MatrixXd::Ones(2, 2)};
  EXPECT_THROW(bad.validate(), DataError);
}

}  // namespace
}  // namespace rdpi
