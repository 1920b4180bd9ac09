#include <gtest/gtest.h>

#include <cmath>

#include "helpers.hpp"
#include "rdpi/error.hpp"
#include "rdpi/initial_imputer.hpp"

namespace rdpi {
namespace {

InitialModel model(InitialStrategy s) {
  Rng rng(1);
  return InitialModel::make(s, 4, rng);
}

TEST(InitialImputer, FullyObservedIsIdentity) {
  Rng rng(2);
  const Grid x = rng.normal_grid(5, 3);
  for (auto s : {InitialStrategy::node_mean, InitialStrategy::interp_graph, InitialStrategy::trainable})
    EXPECT_EQ(impute_initial(x, test::all(5, 3), test::line3(), model(s)), x);
}

TEST(InitialImputer, NodeMean) {
  Grid x(3, 1);
  x << 1, 99, 3;
  Mask v = test::all(3, 1);
  v(1, 0) = false;
  Graph g{Eigen::MatrixXd::Zero(1, 1)};
  EXPECT_DOUBLE_EQ(impute_initial(x, v, g, model(InitialStrategy::node_mean))(1, 0), 2.0);
}

TEST(InitialImputer, NodeMeanFallsBackToGlobal) {
  Grid x(2, 2);
  x << 1, 0, 3, 0;
  Mask v = test::all(2, 2);
  v.col(1).setConstant(false);
  const Grid out = impute_initial(x, v, Graph{Eigen::MatrixXd::Zero(2, 2)}, model(InitialStrategy::node_mean));
  EXPECT_DOUBLE_EQ(out(0, 1), 2.0);
}

TEST(InitialImputer, InterpolatesAndHoldsEdges) {
  Grid x(5, 1);
  x << 0, 1, 0, 5, 0;
  Mask v = Mask::Constant(5, 1, false);
  v(1, 0) = v(3, 0) = true;
  Graph g{Eigen::MatrixXd::Zero(1, 1)};
  const Grid out = impute_initial(x, v, g, model(InitialStrategy::interp_graph));
  EXPECT_DOUBLE_EQ(out(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(out(2, 0), 3.0);
  EXPECT_DOUBLE_EQ(out(4, 0), 5.0);
}

TEST(InitialImputer, MissingNodeUsesNeighbours) {
  Grid x(2, 3);
  x << 1, 0, 5,
       2, 0, 8;
  Mask v = test::all(2, 3);
  v.col(1).setConstant(false);
  const Grid out = impute_initial(x, v, test::line3(), model(InitialStrategy::interp_graph));
  EXPECT_DOUBLE_EQ(out(0, 1), 3.0);
  EXPECT_DOUBLE_EQ(out(1, 1), 5.0);
}

TEST(InitialImputer, TrainableKeepsVisibleCells) {
  Rng rng(3);
  const Grid x = rng.normal_grid(6, 3);
  Mask v = test::all(6, 3);
  v(1, 0) = v(4, 2) = v(5, 1) = false;
  const Grid out = impute_initial(x, v, test::line3(), model(InitialStrategy::trainable));
  for (Eigen::Index i = 0; i < 6; ++i)
    for (Eigen::Index j = 0; j < 3; ++j)
      if (v(i, j)) EXPECT_EQ(out(i, j), x(i, j));
  EXPECT_TRUE(out.allFinite());
}

TEST(InitialImputer, TrainableIgnoresHiddenValues) {
  Rng rng(4);
  Grid x = rng.normal_grid(6, 3);
  Mask v = test::all(6, 3);
  v(2, 1) = false;
  const auto m = model(InitialStrategy::trainable);
  const Grid a = impute_initial(x, v, test::line3(), m);
  x(2, 1) = 1e6;
  EXPECT_EQ(impute_initial(x, v, test::line3(), m)(2, 1), a(2, 1));
}

TEST(InitialImputer, ParseStrategy) {
  EXPECT_EQ(parse_initial_strategy("interp_graph"), InitialStrategy::interp_graph);
  EXPECT_EQ(to_string(InitialStrategy::trainable), "trainable");
  EXPECT_THROW(parse_initial_strategy("grin"), ConfigError);
  EXPECT_FALSE(model(InitialStrategy::node_mean).has_parameters());
}

TEST(Residual, Definition) {
  MaskedGrid x;
  x.values = test::scalar(3.0);
  x.observed = test::all(1, 1);
  x.eval = test::all(1, 1);
  const auto [zm, zc] = residual_and_condition(test::scalar(5.0), x, test::all(1, 1));
  EXPECT_EQ(zm.values(0, 0), 2.0);
  EXPECT_EQ(zc.values(0, 0), 5.0);
  // Readout: x_init - z0m recovers x.
  EXPECT_EQ(5.0 - zm.values(0, 0), 3.0);
}

TEST(Residual, ZeroOutsideTargetAndUnobservedThrows) {
  MaskedGrid x;
  x.values = (Grid(1, 2) << 1, 2).finished();
  x.observed = test::all(1, 2);
  x.eval = Mask::Constant(1, 2, false);
  Mask t = test::all(1, 2);
  t(0, 1) = false;
  const auto [zm, zc] = residual_and_condition((Grid(1, 2) << 4, 4).finished(), x, t);
  EXPECT_EQ(zm.values(0, 1), 0.0);
  EXPECT_EQ(zc.values(0, 1), 0.0);
  x.observed(0, 0) = false;
  EXPECT_THROW(residual_and_condition((Grid(1, 2) << 4, 4).finished(), x, t), DataError);
}

TEST(InitLoss, Values) {
  const Grid truth = Grid::Zero(1, 3);
  EXPECT_EQ(init_loss(truth, truth, test::all(1, 3)), 0.0);
  EXPECT_DOUBLE_EQ(init_loss((Grid(1, 2) << 2, -2).finished(), Grid::Zero(1, 2), test::all(1, 2)), 2.0);
  EXPECT_DOUBLE_EQ(init_loss((Grid(1, 3) << 1, 2, 3).finished(), truth, test::all(1, 3)), 2.0);
  EXPECT_DOUBLE_EQ(init_loss((Grid(1, 3) << 1, 2, 3).finished(), truth, test::all(1, 3), LossNorm::l2), 14.0 / 3.0);
  EXPECT_THROW(init_loss(truth, truth, Mask::Constant(1, 3, false)), DataError);
}

}  // namespace
}  // namespace rdpi
