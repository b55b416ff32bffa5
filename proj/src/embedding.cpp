#include "koopctl/embedding.hpp"

#include <cmath>

namespace koopctl {

EncoderParams make_encoder(Index input_dim, Index latent_dim, Rng& rng, Index hidden) {
  EncoderParams p;
  p.query = Mlp({input_dim, hidden, hidden, latent_dim}, rng, true);
  p.key = p.query.frozen_copy();
  p.similarity_w = Tensor(Matrix::Identity(latent_dim, latent_dim), true);
  return p;
}

Tensor encode(const EncoderParams& params, const Tensor& x, EncoderRole which) {
  return which == EncoderRole::kQuery ? params.query.forward(x) : params.key.forward(x);
}

Matrix augment(const Matrix& x, double eta, Rng& rng) {
  if (eta < 0.0) throw UsageError("augment: eta must be non-negative");
  Matrix out = x;
  if (eta == 0.0) return out;
  for (Index c = 0; c < x.cols(); ++c) {
    for (Index r = 0; r < x.rows(); ++r) {
      const double bound = eta * std::abs(x(r, c));
      if (bound == 0.0) continue;
      out(r, c) += uniform(rng, -bound, bound);
    }
  }
  return out;
}

Matrix augment(const Matrix& x, double eta, std::uint64_t seed) {
  Rng rng(derive_seed(seed, "augment"));
  return augment(x, eta, rng);
}

Tensor contrastive_loss(const Tensor& z_query, const Tensor& z_plus, const Tensor& w) {
  if (z_query.rows() < 2) throw UsageError("contrastive_loss: batch must be at least 2");
  if (z_query.rows() != z_plus.rows() || z_query.cols() != z_plus.cols()) {
    throw DimensionError("contrastive_loss: query " + z_query.shape_str() + " vs positive " + z_plus.shape_str());
  }
  if (w.rows() != z_query.cols() || w.cols() != z_query.cols()) {
    throw DimensionError("contrastive_loss: W " + w.shape_str() + " vs latent " + z_query.shape_str());
  }
  Tensor logits = matmul(matmul(z_query, w), transpose(z_plus));
  return mean_diagonal_cross_entropy(logits);
}

void momentum_update(EncoderParams& params, double tau) {
  if (tau < 0.0 || tau > 1.0) throw UsageError("momentum_update: tau must lie in [0, 1]");
  params.key.ema_from(params.query, tau);
}

}  // namespace koopctl
