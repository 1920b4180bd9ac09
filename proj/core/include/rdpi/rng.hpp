#pragma once

#include <cstdint>
#include <random>

#include "rdpi/grid.hpp"

namespace rdpi {

/// Explicit random stream. Every stochastic operation takes one of these;
/// there is no global generator.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  /// Independent child stream keyed by (this stream's seed, stream_id).
  /// Does not advance this stream.
  [[nodiscard]] Rng derive(std::uint64_t stream_id) const;

  double uniform();                // [0, 1)
  double normal();                 // N(0, 1)
  int uniform_int(int lo, int hi); // inclusive
  bool bernoulli(double p);

  /// Grid of independent standard normals.
  Grid normal_grid(Eigen::Index rows, Eigen::Index cols);

  [[nodiscard]] std::uint64_t seed() const noexcept { return seed_; }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

/// Stateless uniform in [0, 1) keyed by (seed, a, b); used where a draw must
/// not depend on iteration order.
double counter_uniform(std::uint64_t seed, std::uint64_t a, std::uint64_t b);

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace rdpi
