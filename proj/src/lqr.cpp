#include "koopctl/lqr.hpp"

#include <cmath>
#include <numbers>

namespace koopctl {

LqrParams make_lqr_params(Index latent_dim, Index control_dim, int iterations) {
  if (iterations < 1) throw UsageError("LQR iterations must be at least 1");
  LqrParams p;
  p.q_raw = Tensor(Matrix::Constant(latent_dim, 1, kUnitSoftplusRaw), true);
  p.r_raw = Tensor(Matrix::Constant(control_dim, 1, kUnitSoftplusRaw), true);
  p.z_ref = Tensor(Matrix::Zero(latent_dim, 1));
  p.iterations = iterations;
  return p;
}

Tensor effective_cost_diagonal(const Tensor& raw) { return add_scalar(softplus(raw), kCostFloor); }

LqrSolution solve_dare(const KoopmanModel& model, const Tensor& q_diag, const Tensor& r_diag, int iterations) {
  const Index d = model.latent_dim();
  const Index m = model.control_dim();
  if (iterations < 1) throw UsageError("solve_dare: iterations must be at least 1");
  if (q_diag.rows() != d || q_diag.cols() != 1 || r_diag.rows() != m || r_diag.cols() != 1) {
    throw DimensionError("solve_dare: Q diag " + q_diag.shape_str() + ", R diag " + r_diag.shape_str() +
                         " vs A " + model.a.shape_str() + ", B " + model.b.shape_str());
  }
  const Tensor& a = model.a;
  const Tensor& b = model.b;
  const Tensor q = diag(q_diag);
  const Tensor r = diag(r_diag);
  const Tensor at = transpose(a);
  const Tensor bt = transpose(b);

  Tensor p = q;
  for (int it = 1; it <= iterations; ++it) {
    Tensor pa = matmul(p, a);
    Tensor bt_pa = matmul(bt, pa);                    // B^T P A   [m x d]
    Tensor s = add(r, matmul(bt, matmul(p, b)));      // R + B^T P B [m x m]
    Tensor k = solve(s, bt_pa);                       // [m x d]
    p = add(sub(matmul(at, pa), matmul(transpose(bt_pa), k)), q);
    p = symmetrize(p);
    if (!p.value().allFinite()) {
      throw NumericError("solve_dare: non-finite Riccati iterate at iteration " + std::to_string(it));
    }
  }
  Tensor s = add(matmul(bt, matmul(p, b)), r);
  Tensor g = solve(s, matmul(bt, matmul(p, a)));
  return {p, g};
}

LqrSolution solve_dare(const KoopmanModel& model, const LqrParams& params) {
  return solve_dare(model, effective_cost_diagonal(params.q_raw), effective_cost_diagonal(params.r_raw),
                    params.iterations);
}

Tensor lqr_action_mean(const LqrSolution& sol, const Tensor& z, const Tensor& z_ref) {
  if (z.cols() != sol.g.cols() || z_ref.rows() != sol.g.cols() || z_ref.cols() != 1) {
    throw DimensionError("lqr_action_mean: z " + z.shape_str() + ", z_ref " + z_ref.shape_str() + " vs G " +
                         sol.g.shape_str());
  }
  Tensor err = add_rowwise(z, scale(transpose(z_ref), -1.0));
  return scale(matmul(err, transpose(sol.g)), -1.0);
}

PolicySample policy_sample(const LqrSolution& sol, const Tensor& z, const Tensor& z_ref, const Tensor& log_std,
                           const Matrix& noise) {
  const Index m = sol.g.rows();
  if (log_std.rows() != 1 || log_std.cols() != m) {
    throw DimensionError("policy_sample: log_std " + log_std.shape_str() + " vs G " + sol.g.shape_str());
  }
  if (noise.rows() != z.rows() || noise.cols() != m) throw DimensionError("policy_sample: noise shape");

  Tensor mu = lqr_action_mean(sol, z, z_ref);
  Tensor ls = clamp(log_std, kLogStdMin, kLogStdMax);
  Tensor pre = add(mu, mul_rowwise(Tensor(noise), exp(ls)));
  Tensor u = tanh(pre);

  const double half_log_2pi = 0.5 * std::log(2.0 * std::numbers::pi);
  Matrix eps_term = (-0.5 * noise.array().square() - half_log_2pi).matrix();
  Tensor gauss = sum_rows(add_rowwise(Tensor(std::move(eps_term)), scale(ls, -1.0)));
  Tensor squash = sum_rows(log(add_scalar(scale(square(u), -1.0), 1.0 + 1e-6)));
  return {u, sub(gauss, squash), mu};
}

PolicySample policy_sample(const LqrSolution& sol, const Tensor& z, const Tensor& z_ref, const Tensor& log_std,
                           Rng& rng) {
  Matrix noise(z.rows(), sol.g.rows());
  for (Index c = 0; c < noise.cols(); ++c) {
    for (Index r = 0; r < noise.rows(); ++r) noise(r, c) = standard_normal(rng);
  }
  return policy_sample(sol, z, z_ref, log_std, noise);
}

Tensor closed_loop_matrix(const KoopmanModel& model, const LqrSolution& sol) {
  return sub(model.a, matmul(model.b, sol.g));
}

}  // namespace koopctl
