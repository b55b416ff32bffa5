#include "koopctl/adam.hpp"

#include <cmath>

namespace koopctl {

void Adam::add(const std::vector<Tensor>& params, double lr) {
  for (const auto& p : params) {
    if (!p.is_leaf() || !p.requires_grad()) throw UsageError("Adam: parameters must be grad-requiring leaves");
    slots_.push_back({p, lr, Matrix::Zero(p.rows(), p.cols()), Matrix::Zero(p.rows(), p.cols())});
  }
}

void Adam::step() {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (auto& s : slots_) {
    Matrix g = s.param.grad();
    s.m = beta1_ * s.m + (1.0 - beta1_) * g;
    s.v = beta2_ * s.v + (1.0 - beta2_) * g.cwiseAbs2();
    if (s.lr == 0.0) continue;
    Matrix update = (s.m / c1).array() / ((s.v / c2).array().sqrt() + eps_);
    s.param.leaf_value() -= s.lr * update;
  }
}

void Adam::zero_grad() {
  for (auto& s : slots_) s.param.zero_grad();
}

}  // namespace koopctl
