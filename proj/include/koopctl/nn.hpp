#pragma once

#include <vector>

#include "koopctl/ops.hpp"
#include "koopctl/random.hpp"

namespace koopctl {

/// y = x W + b with W [in x out], b [1 x out].
struct Linear {
  Tensor weight;
  Tensor bias;
};

/// Fully connected network, tanh between layers, linear output.
class Mlp {
 public:
  Mlp() = default;
  /// sizes = {in, hidden..., out}; weights ~ U(-1/sqrt(in), 1/sqrt(in)), biases zero.
  Mlp(const std::vector<Index>& sizes, Rng& rng, bool requires_grad = true);

  Tensor forward(const Tensor& x) const;

  Index input_dim() const;
  Index output_dim() const;
  std::vector<Tensor> parameters() const;
  std::vector<Linear>& layers() { return layers_; }
  const std::vector<Linear>& layers() const { return layers_; }

  /// Same shapes, values copied, as constants off the tape.
  Mlp frozen_copy() const;
  /// this <- tau * this + (1 - tau) * source, in place on leaf values.
  void ema_from(const Mlp& source, double tau);
  bool same_shapes(const Mlp& other) const;

 private:
  std::vector<Linear> layers_;
};

}  // namespace koopctl
