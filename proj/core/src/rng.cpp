#include "rdpi/rng.hpp"

#include <cmath>
#include <numbers>

namespace rdpi {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

double to_unit(std::uint64_t bits) {
  return static_cast<double>(bits >> 11) * 0x1.0p-53;
}

}  // namespace

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  return splitmix64(splitmix64(seed) ^ splitmix64(stream + 0x632be59bd9b4e019ULL));
}

double counter_uniform(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  return to_unit(splitmix64(mix_seed(seed, a) ^ splitmix64(b ^ 0xd1b54a32d192ed03ULL)));
}

Rng::Rng(std::uint64_t seed) : seed_(seed), engine_(splitmix64(seed)) {}

Rng Rng::derive(std::uint64_t stream_id) const { return Rng(mix_seed(seed_, stream_id)); }

double Rng::uniform() { return to_unit(engine_()); }

// Box-Muller without caching so the stream position is a pure function of
// the number of draws.
double Rng::normal() {
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

int Rng::uniform_int(int lo, int hi) {
  const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
  return lo + static_cast<int>(engine_() % span);
}

bool Rng::bernoulli(double p) { return uniform() < p; }

Grid Rng::normal_grid(Eigen::Index rows, Eigen::Index cols) {
  Grid g(rows, cols);
  // Row-major fill so draws map to (time, node) in reading order.
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) g(i, j) = normal();
  return g;
}

}  // namespace rdpi
