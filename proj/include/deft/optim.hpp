// optim.hpp: Adam over a flat list of parameter tensors.
#pragma once

#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

namespace deft {

class Adam {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  double lr() const { return lr_; }
  void set_lr(double lr) { lr_ = lr; }

  void step(const std::vector<std::span<double>>& params,
            const std::vector<std::span<const double>>& grads) {
    if (params.size() != grads.size()) throw std::invalid_argument("Adam: tensor count mismatch");
    if (m_.empty()) {
      for (const auto& p : params) {
        m_.push_back(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(p.size())));
        v_.push_back(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(p.size())));
      }
    }
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, t_);
    const double c2 = 1.0 - std::pow(beta2_, t_);
    for (std::size_t k = 0; k < params.size(); ++k) {
      if (params[k].size() != grads[k].size() ||
          static_cast<Eigen::Index>(params[k].size()) != m_[k].size()) {
        throw std::invalid_argument("Adam: tensor size mismatch");
      }
      for (std::size_t n = 0; n < params[k].size(); ++n) {
        const double g = grads[k][n];
        double& m = m_[k][static_cast<Eigen::Index>(n)];
        double& v = v_[k][static_cast<Eigen::Index>(n)];
        m = beta1_ * m + (1.0 - beta1_) * g;
        v = beta2_ * v + (1.0 - beta2_) * g * g;
        params[k][n] -= lr_ * (m / c1) / (std::sqrt(v / c2) + eps_);
      }
    }
  }

 private:
  double lr_, beta1_, beta2_, eps_;
  int t_ = 0;
  std::vector<Eigen::VectorXd> m_, v_;
};

}  // namespace deft
