#include "rdpi/optim.hpp"

#include <cmath>

#include "rdpi/error.hpp"

namespace rdpi {

Adam::Adam(Options options) : opt_(options) {
  if (!(opt_.lr > 0.0) || !(opt_.beta1 >= 0.0 && opt_.beta1 < 1.0) || !(opt_.beta2 >= 0.0 && opt_.beta2 < 1.0) ||
      !(opt_.eps > 0.0))
    throw ConfigError("adam: invalid hyperparameters");
}

void Adam::step(std::span<Eigen::MatrixXd* const> params, std::span<const Eigen::MatrixXd* const> grads) {
  if (params.size() != grads.size()) throw DimensionError("adam: parameter and gradient counts differ");
  if (m_.empty()) {
    for (auto* p : params) {
      m_.push_back(Eigen::MatrixXd::Zero(p->rows(), p->cols()));
      v_.push_back(Eigen::MatrixXd::Zero(p->rows(), p->cols()));
    }
  }
  if (m_.size() != params.size()) throw DimensionError("adam: tensor list changed between steps");
  ++t_;
  const double c1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = *params[i];
    const auto& g = *grads[i];
    if (g.rows() != p.rows() || g.cols() != p.cols()) throw DimensionError("adam: gradient shape differs from parameter");
    m_[i] = opt_.beta1 * m_[i] + (1.0 - opt_.beta1) * g;
    v_[i] = opt_.beta2 * v_[i] + (1.0 - opt_.beta2) * g.cwiseAbs2();
    p.array() -= opt_.lr * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + opt_.eps);
  }
}

}  // namespace rdpi
