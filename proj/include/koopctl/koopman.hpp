#pragma once

#include "koopctl/ops.hpp"
#include "koopctl/random.hpp"

namespace koopctl {

/// Latent linear model z' = A z + B u, A [d x d], B [d x m].
struct KoopmanModel {
  Tensor a;
  Tensor b;

  Index latent_dim() const { return a.rows(); }
  Index control_dim() const { return b.cols(); }
};

/// A = I + N(0, 0.01^2), B = N(0, 0.01^2); both trainable.
KoopmanModel make_koopman(Index latent_dim, Index control_dim, Rng& rng);

/// Row convention: z [batch x d], u [batch x m] -> z A^T + u B^T.
Tensor predict(const KoopmanModel& model, const Tensor& z, const Tensor& u);

/// Batch mean of squared row norms of (z_next_hat - predict(z, u)).
/// The target is detached here regardless of how it was produced.
Tensor model_loss(const KoopmanModel& model, const Tensor& z, const Tensor& u, const Tensor& z_next_hat);

/// Closed-form ridge regression of [A B] on the stacked regressor [z u]:
/// (Phi^T Phi + ridge I) [A B]^T = Phi^T z_next. Result tensors are constants.
/// Throws NumericError when ridge == 0 and the regressor is rank deficient.
KoopmanModel fit_least_squares(const Matrix& z, const Matrix& u, const Matrix& z_next, double ridge = 1e-6);

}  // namespace koopctl
