#pragma once

#include <span>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace rdpi {

/// Adam with bias correction. State is keyed by tensor position, so every
/// call to step() must pass the same tensors in the same order.
class Adam {
 public:
  struct Options {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
  };

  explicit Adam(Options options);

  void step(std::span<Eigen::MatrixXd* const> params, std::span<const Eigen::MatrixXd* const> grads);
  [[nodiscard]] long steps() const noexcept { return t_; }
  [[nodiscard]] const Options& options() const noexcept { return opt_; }

 private:
  Options opt_;
  long t_ = 0;
  std::vector<Eigen::MatrixXd> m_;
  std::vector<Eigen::MatrixXd> v_;
};

/// Pointers to every tensor of an object exposing visit(f(name, Matrix&)).
template <typename T>
std::vector<Eigen::MatrixXd*> tensors_of(T& obj) {
  std::vector<Eigen::MatrixXd*> out;
  obj.visit([&](std::string_view, Eigen::MatrixXd& m) { out.push_back(&m); });
  return out;
}

}  // namespace rdpi
