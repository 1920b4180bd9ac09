#pragma once

#include <Eigen/Dense>

namespace rdpi {

/// time x node grid of scalars (row = time step, column = node).
using Grid = Eigen::MatrixXd;
/// time x node boolean layer.
using Mask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

inline Grid mask_to_grid(const Mask& m) { return m.cast<double>().matrix(); }

inline Eigen::Index count(const Mask& m) { return m.count(); }

}  // namespace rdpi
