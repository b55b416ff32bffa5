#include "koopctl/koopman.hpp"

#include "koopctl/linalg.hpp"

namespace koopctl {

KoopmanModel make_koopman(Index latent_dim, Index control_dim, Rng& rng) {
  Matrix a = Matrix::Identity(latent_dim, latent_dim);
  for (Index c = 0; c < latent_dim; ++c) {
    for (Index r = 0; r < latent_dim; ++r) a(r, c) += 0.01 * standard_normal(rng);
  }
  Matrix b(latent_dim, control_dim);
  for (Index c = 0; c < control_dim; ++c) {
    for (Index r = 0; r < latent_dim; ++r) b(r, c) = 0.01 * standard_normal(rng);
  }
  return {Tensor(std::move(a), true), Tensor(std::move(b), true)};
}

Tensor predict(const KoopmanModel& model, const Tensor& z, const Tensor& u) {
  if (z.cols() != model.latent_dim() || u.cols() != model.control_dim() || z.rows() != u.rows()) {
    throw DimensionError("predict: z " + z.shape_str() + ", u " + u.shape_str() + " vs A " + model.a.shape_str() +
                         ", B " + model.b.shape_str());
  }
  return add(matmul(z, transpose(model.a)), matmul(u, transpose(model.b)));
}

Tensor model_loss(const KoopmanModel& model, const Tensor& z, const Tensor& u, const Tensor& z_next_hat) {
  if (z_next_hat.rows() != z.rows() || z_next_hat.cols() != model.latent_dim()) {
    throw DimensionError("model_loss: target " + z_next_hat.shape_str() + " vs latent " + z.shape_str());
  }
  Tensor residual = sub(z_next_hat.detach(), predict(model, z, u));
  return scale(sum(square(residual)), 1.0 / static_cast<double>(z.rows()));
}

KoopmanModel fit_least_squares(const Matrix& z, const Matrix& u, const Matrix& z_next, double ridge) {
  const Index n = z.rows();
  const Index d = z.cols();
  const Index m = u.cols();
  if (u.rows() != n || z_next.rows() != n || z_next.cols() != d) {
    throw DimensionError("fit_least_squares: inconsistent z, u, z_next shapes");
  }
  if (ridge < 0.0) throw UsageError("fit_least_squares: ridge must be non-negative");
  if (n < d + m) throw UsageError("fit_least_squares: need at least d + m samples");

  Matrix phi(n, d + m);
  phi << z, u;
  if (ridge == 0.0 && numerical_rank(phi) < d + m) {
    throw NumericError("fit_least_squares: regressor [z u] is rank deficient and ridge is 0");
  }
  Matrix gram = phi.transpose() * phi;
  gram.diagonal().array() += ridge;
  Eigen::LDLT<Matrix> ldlt(gram);
  if (ldlt.info() != Eigen::Success) throw NumericError("fit_least_squares: normal equations not solvable");
  Matrix theta = ldlt.solve(phi.transpose() * z_next);  // [(d+m) x d] = [A B]^T
  Matrix ab = theta.transpose();
  return {Tensor(ab.leftCols(d)), Tensor(ab.rightCols(m))};
}

}  // namespace koopctl
