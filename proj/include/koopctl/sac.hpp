#pragma once

#include <optional>

#include "koopctl/adam.hpp"
#include "koopctl/config.hpp"
#include "koopctl/embedding.hpp"
#include "koopctl/koopman.hpp"
#include "koopctl/lqr.hpp"
#include "koopctl/replay_buffer.hpp"

namespace koopctl {

/// Twin Q-networks over [z u] plus their EMA targets (never on the tape).
struct CriticPair {
  Mlp q1, q2;
  Mlp q1_target, q2_target;

  /// Q_i(z, u) for both heads, each [batch x 1].
  std::pair<Tensor, Tensor> forward(const Tensor& z, const Tensor& u) const;
  std::pair<Tensor, Tensor> forward_target(const Tensor& z, const Tensor& u) const;
  /// Heads evaluated with constant weight copies: gradients reach z and u only.
  std::pair<Tensor, Tensor> forward_frozen(const Tensor& z, const Tensor& u) const;
  void update_targets(double tau);
};

CriticPair make_critics(Index latent_dim, Index control_dim, Index hidden, Rng& rng);

/// y = r + gamma (1 - d)(min_target_q - alpha_log_pi).
double critic_target_value(double r, double d, double min_target_q, double alpha_log_pi, double gamma);

struct LossReport {
  double critic = 0.0;
  double actor = 0.0;  // mean(alpha log pi - min Q)
  double alpha_loss = 0.0;
  double contrastive = 0.0;
  double model = 0.0;
  double alpha = 0.0;
  double entropy = 0.0;  // mean -log pi
};

/// Cached deterministic pieces of the acting policy, recomputed after updates.
struct PolicySnapshot {
  Matrix gain;     // G [m x d]
  Vector z_ref;    // [d]
};

/// All learnable state of the task-oriented Koopman controller and its optimizers.
///
/// Parameter groups:
///   critic_opt: both Q heads (lr_critic) and the query encoder (lr_encoder)
///   actor_opt:  q_raw, r_raw, A, B (lr_actor), query encoder (lr_encoder), log_std (lr_actor)
///   cst_opt:    query encoder and W (lr_encoder)
///   model_opt:  A, B (lr_koopman)
///   alpha_opt:  log_alpha (lr_alpha)
class Agent {
 public:
  Agent(const Config& cfg, Index obs_dim, Index control_dim, const Vector& goal_obs, Rng& init_rng);

  const Config& config() const { return cfg_; }
  Index obs_dim() const { return obs_dim_; }
  Index control_dim() const { return control_dim_; }
  Index latent_dim() const { return cfg_.latent_dim; }

  EncoderParams encoder;
  KoopmanModel koopman;
  LqrParams lqr;
  Tensor log_std;    // [1 x m]
  Tensor log_alpha;  // [1 x 1]
  CriticPair critics;
  Adam critic_opt, actor_opt, cst_opt, model_opt, alpha_opt;

  double alpha() const;
  double target_entropy() const { return -static_cast<double>(control_dim_); }
  const Matrix& goal_obs() const { return goal_obs_; }

  /// z_ref per zref_mode: encoder at the goal observation, or zero. [d x 1]
  Tensor latent_reference() const;
  /// G and z_ref for acting, computed off the tape with `iterations` (0: training M).
  PolicySnapshot snapshot(int iterations = 0) const;

  /// Control for one observation. With a noise source the tanh-Gaussian is
  /// sampled; without one the deterministic tanh(mean) is returned.
  Vector act(const PolicySnapshot& snap, const Vector& obs, Rng* noise) const;

  std::vector<Adam*> optimizers();
  void zero_all_grads();
  /// Grad-requiring leaves of every group, for routing checks.
  std::vector<Tensor> encoder_parameters() const { return encoder.query.parameters(); }
  std::vector<Tensor> critic_parameters() const;
  std::vector<Tensor> target_parameters() const;

 private:
  Config cfg_;
  Index obs_dim_, control_dim_;
  Matrix goal_obs_;  // [1 x n]
};

/// Bootstrapped SAC targets for a batch, off the tape. `noise` draws u'.
/// The policy acts on the query embedding of x'; the target critics score
/// the key embedding.
Vector critic_targets(const Agent& agent, const TransitionBatch& batch, Rng& noise);

/// Individual objectives, each returned on the tape so routing can be inspected.
Tensor critic_loss(const Agent& agent, const TransitionBatch& batch, const Vector& targets);
struct ActorTerms {
  Tensor loss;
  Tensor log_prob;  // [batch x 1]
};
/// The critics see a detached embedding; the encoder learns only through the policy mean.
ActorTerms actor_loss(const Agent& agent, const TransitionBatch& batch, Rng& noise);
Tensor contrastive_objective(const Agent& agent, const TransitionBatch& batch, Rng& augment_rng);
Tensor model_objective(const Agent& agent, const TransitionBatch& batch);

/// alpha = exp(log_alpha); loss = mean(alpha (-log pi - target_entropy)). One optimizer step.
double update_temperature(Tensor& log_alpha, const Matrix& log_probs, double target_entropy, Adam& opt);

/// One training iteration on a sampled batch: critic step, actor step, contrastive
/// step, model step, then key-encoder and critic-target EMA and the temperature
/// step. Throws TrainingError naming the first non-finite loss.
LossReport update_step(Agent& agent, const TransitionBatch& batch, RngStreams& rngs);

}  // namespace koopctl
