#include "koopctl/nn.hpp"

#include <cmath>

namespace koopctl {

Mlp::Mlp(const std::vector<Index>& sizes, Rng& rng, bool requires_grad) {
  if (sizes.size() < 2) throw UsageError("Mlp needs at least input and output sizes");
  for (std::size_t i = 0; i + 1 < sizes.size(); ++i) {
    const Index in = sizes[i];
    const Index out = sizes[i + 1];
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    Matrix w(in, out);
    // Column-major fill order is part of the seeded init contract.
    for (Index c = 0; c < out; ++c) {
      for (Index r = 0; r < in; ++r) w(r, c) = uniform(rng, -bound, bound);
    }
    layers_.push_back({Tensor(std::move(w), requires_grad), Tensor(Matrix::Zero(1, out), requires_grad)});
  }
}

Tensor Mlp::forward(const Tensor& x) const {
  if (layers_.empty()) throw UsageError("forward on an empty Mlp");
  if (x.cols() != input_dim()) {
    throw DimensionError("mlp: input " + x.shape_str() + " vs first layer " + layers_.front().weight.shape_str());
  }
  Tensor h = x;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    h = add_rowwise(matmul(h, layers_[i].weight), layers_[i].bias);
    if (i + 1 < layers_.size()) h = tanh(h);
  }
  return h;
}

Index Mlp::input_dim() const { return layers_.empty() ? 0 : layers_.front().weight.rows(); }
Index Mlp::output_dim() const { return layers_.empty() ? 0 : layers_.back().weight.cols(); }

std::vector<Tensor> Mlp::parameters() const {
  std::vector<Tensor> out;
  for (const auto& l : layers_) {
    out.push_back(l.weight);
    out.push_back(l.bias);
  }
  return out;
}

Mlp Mlp::frozen_copy() const {
  Mlp out;
  for (const auto& l : layers_) out.layers_.push_back({l.weight.detach(), l.bias.detach()});
  return out;
}

void Mlp::ema_from(const Mlp& source, double tau) {
  if (!same_shapes(source)) throw DimensionError("ema_from: network shapes differ");
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    auto& w = layers_[i].weight.leaf_value();
    auto& b = layers_[i].bias.leaf_value();
    // Incremental form keeps an already-equal copy bitwise unchanged.
    if (tau == 0.0) {
      w = source.layers_[i].weight.value();
      b = source.layers_[i].bias.value();
    } else {
      w += (1.0 - tau) * (source.layers_[i].weight.value() - w);
      b += (1.0 - tau) * (source.layers_[i].bias.value() - b);
    }
  }
}

bool Mlp::same_shapes(const Mlp& other) const {
  if (layers_.size() != other.layers_.size()) return false;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (layers_[i].weight.shape() != other.layers_[i].weight.shape()) return false;
    if (layers_[i].bias.shape() != other.layers_[i].bias.shape()) return false;
  }
  return true;
}

}  // namespace koopctl
