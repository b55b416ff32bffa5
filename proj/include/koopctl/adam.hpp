#pragma once

#include <string>
#include <vector>

#include "koopctl/tensor.hpp"

namespace koopctl {

/// Adaptive moment estimation over a fixed set of leaf tensors, each with
/// its own learning rate. Moment buffers are exposed so checkpoints can
/// persist them.
class Adam {
 public:
  struct Slot {
    Tensor param;
    double lr;
    Matrix m;
    Matrix v;
  };

  explicit Adam(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void add(const std::vector<Tensor>& params, double lr);
  void add(const Tensor& param, double lr) { add(std::vector<Tensor>{param}, lr); }

  /// Applies one update using the current grads. Params without grad still
  /// advance their moments with a zero gradient.
  void step();
  void zero_grad();

  std::vector<Slot>& slots() { return slots_; }
  const std::vector<Slot>& slots() const { return slots_; }
  long long step_count() const { return t_; }
  void set_step_count(long long t) { t_ = t; }

 private:
  double beta1_, beta2_, eps_;
  long long t_ = 0;
  std::vector<Slot> slots_;
};

}  // namespace koopctl
