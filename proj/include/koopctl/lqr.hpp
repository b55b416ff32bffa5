#pragma once

#include "koopctl/koopman.hpp"

namespace koopctl {

/// softplus^-1(1): raw value giving an effective weight of ~1.
inline constexpr double kUnitSoftplusRaw = 0.5413248546129181;
inline constexpr double kCostFloor = 1e-6;
inline constexpr double kLogStdMin = -10.0;
inline constexpr double kLogStdMax = 2.0;

/// Learnable diagonal LQR costs and the latent reference.
///
/// Effective Q = diag(softplus(q_raw) + 1e-6), R = diag(softplus(r_raw) + 1e-6),
/// symmetric positive definite for any raw values.
struct LqrParams {
  Tensor q_raw;  // [d x 1]
  Tensor r_raw;  // [m x 1]
  Tensor z_ref;  // [d x 1]
  int iterations = 5;

  Index latent_dim() const { return q_raw.rows(); }
  Index control_dim() const { return r_raw.rows(); }
};

/// q_raw, r_raw set so Q ~ I, R ~ I; z_ref zero.
LqrParams make_lqr_params(Index latent_dim, Index control_dim, int iterations);

/// Diagonal of the effective cost matrix, on the tape.
Tensor effective_cost_diagonal(const Tensor& raw);

struct LqrSolution {
  Tensor p;  // [d x d]
  Tensor g;  // [m x d]
};

/// Riccati recursion unrolled `iterations` times from P = Q,
///   P <- A^T P A - A^T P B (R + B^T P B)^-1 B^T P A + Q,  P <- (P + P^T)/2,
/// then G = (B^T P B + R)^-1 B^T P A. Every step is on the tape.
/// Throws NumericError (naming the iteration) on a non-finite intermediate.
LqrSolution solve_dare(const KoopmanModel& model, const Tensor& q_diag, const Tensor& r_diag, int iterations);
LqrSolution solve_dare(const KoopmanModel& model, const LqrParams& params);

/// -(z - z_ref^T) G^T for latent rows z [batch x d]; z_ref is [d x 1].
Tensor lqr_action_mean(const LqrSolution& sol, const Tensor& z, const Tensor& z_ref);

struct PolicySample {
  Tensor control;   // tanh(pre_squash) [batch x m]
  Tensor log_prob;  // [batch x 1]
  Tensor mean;      // [batch x m]
};

/// Reparameterized tanh-Gaussian around the LQR action: a = mu + exp(log_std) * eps,
/// u = tanh(a), log_prob = log N(a; mu, sigma) - sum log(1 - u^2 + 1e-6).
/// log_std [1 x m] is clamped to [-10, 2]. `noise` holds eps [batch x m].
PolicySample policy_sample(const LqrSolution& sol, const Tensor& z, const Tensor& z_ref, const Tensor& log_std,
                           const Matrix& noise);
PolicySample policy_sample(const LqrSolution& sol, const Tensor& z, const Tensor& z_ref, const Tensor& log_std,
                           Rng& rng);

/// A - B G
Tensor closed_loop_matrix(const KoopmanModel& model, const LqrSolution& sol);

}  // namespace koopctl
