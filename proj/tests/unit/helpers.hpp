#pragma once

#include <filesystem>
#include <string>

#include "rdpi/data.hpp"
#include "rdpi/schedule.hpp"

namespace rdpi::test {

// The (T=2, 0.1, 0.2) schedule used by most hand-checked values.
inline NoiseSchedule two_step() { return NoiseSchedule::linear(2, 0.1, 0.2); }

inline Mask all(Eigen::Index r, Eigen::Index c) { return Mask::Constant(r, c, true); }

inline Grid scalar(double v) { return Grid::Constant(1, 1, v); }

/// 3-node line graph 0 - 1 - 2 with unit weights.
inline Graph line3() {
  Graph g{Eigen::MatrixXd::Zero(3, 3)};
  g.adjacency(0, 1) = g.adjacency(1, 0) = 1.0;
  g.adjacency(1, 2) = g.adjacency(2, 1) = 1.0;
  return g;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / ("rdpi_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace rdpi::test
