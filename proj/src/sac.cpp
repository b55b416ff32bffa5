#include "koopctl/sac.hpp"

#include <cmath>

namespace koopctl {

namespace {

void require_finite_loss(const char* name, const Tensor& loss) {
  if (!std::isfinite(loss.item())) {
    throw TrainingError(name, std::string("non-finite ") + name + " loss");
  }
}

Tensor as_column(const Vector& v) { return Tensor(Matrix(v)); }

}  // namespace

std::pair<Tensor, Tensor> CriticPair::forward(const Tensor& z, const Tensor& u) const {
  Tensor in = concat_cols(z, u);
  return {q1.forward(in), q2.forward(in)};
}

std::pair<Tensor, Tensor> CriticPair::forward_target(const Tensor& z, const Tensor& u) const {
  Tensor in = concat_cols(z, u);
  return {q1_target.forward(in), q2_target.forward(in)};
}

std::pair<Tensor, Tensor> CriticPair::forward_frozen(const Tensor& z, const Tensor& u) const {
  Tensor in = concat_cols(z, u);
  return {q1.frozen_copy().forward(in), q2.frozen_copy().forward(in)};
}

void CriticPair::update_targets(double tau) {
  q1_target.ema_from(q1, tau);
  q2_target.ema_from(q2, tau);
}

CriticPair make_critics(Index latent_dim, Index control_dim, Index hidden, Rng& rng) {
  CriticPair c;
  c.q1 = Mlp({latent_dim + control_dim, hidden, hidden, 1}, rng, true);
  c.q2 = Mlp({latent_dim + control_dim, hidden, hidden, 1}, rng, true);
  c.q1_target = c.q1.frozen_copy();
  c.q2_target = c.q2.frozen_copy();
  return c;
}

double critic_target_value(double r, double d, double min_target_q, double alpha_log_pi, double gamma) {
  return r + gamma * (1.0 - d) * (min_target_q - alpha_log_pi);
}

Agent::Agent(const Config& cfg, Index obs_dim, Index control_dim, const Vector& goal_obs, Rng& init_rng)
    : cfg_(cfg), obs_dim_(obs_dim), control_dim_(control_dim), goal_obs_(goal_obs.transpose()) {
  if (goal_obs.size() != obs_dim) throw DimensionError("Agent: goal observation size mismatch");
  const Index d = cfg.latent_dim;
  encoder = make_encoder(obs_dim, d, init_rng, cfg.hidden_dim);
  koopman = make_koopman(d, control_dim, init_rng);
  lqr = make_lqr_params(d, control_dim, static_cast<int>(cfg.dare_iters));
  critics = make_critics(d, control_dim, cfg.hidden_dim, init_rng);
  log_std = Tensor(Matrix::Constant(1, control_dim, cfg.init_log_std), true);
  log_alpha = Tensor(Matrix::Constant(1, 1, std::log(cfg.init_alpha)), true);

  critic_opt.add(critics.q1.parameters(), cfg.lr_critic);
  critic_opt.add(critics.q2.parameters(), cfg.lr_critic);
  critic_opt.add(encoder.query.parameters(), cfg.lr_encoder);

  actor_opt.add({lqr.q_raw, lqr.r_raw, koopman.a, koopman.b}, cfg.lr_actor);
  actor_opt.add(encoder.query.parameters(), cfg.lr_encoder);
  actor_opt.add(log_std, cfg.lr_actor);

  cst_opt.add(encoder.query.parameters(), cfg.lr_encoder);
  cst_opt.add(encoder.similarity_w, cfg.lr_encoder);

  model_opt.add({koopman.a, koopman.b}, cfg.lr_koopman);
  alpha_opt.add(log_alpha, cfg.lr_alpha);
}

double Agent::alpha() const { return std::exp(log_alpha.item()); }

Tensor Agent::latent_reference() const {
  if (cfg_.zref_mode == "zero") return Tensor(Matrix::Zero(cfg_.latent_dim, 1));
  return transpose(encode(encoder, Tensor(goal_obs_), EncoderRole::kQuery));
}

PolicySnapshot Agent::snapshot(int iterations) const {
  NoGradGuard no_grad;
  const int m = iterations > 0 ? iterations : static_cast<int>(cfg_.dare_iters);
  LqrSolution sol = solve_dare(koopman, effective_cost_diagonal(lqr.q_raw), effective_cost_diagonal(lqr.r_raw), m);
  return {sol.g.value(), latent_reference().value().col(0)};
}

Vector Agent::act(const PolicySnapshot& snap, const Vector& obs, Rng* noise) const {
  NoGradGuard no_grad;
  Tensor z = encode(encoder, Tensor(Matrix(obs.transpose())), EncoderRole::kQuery);
  Vector mean = -snap.gain * (z.value().row(0).transpose() - snap.z_ref);
  Vector pre = mean;
  if (noise != nullptr) {
    for (Index j = 0; j < pre.size(); ++j) {
      const double ls = std::clamp(log_std.value()(0, j), kLogStdMin, kLogStdMax);
      pre(j) += std::exp(ls) * standard_normal(*noise);
    }
  }
  return tanh_values(pre);
}

std::vector<Adam*> Agent::optimizers() { return {&critic_opt, &actor_opt, &cst_opt, &model_opt, &alpha_opt}; }

void Agent::zero_all_grads() {
  for (Adam* opt : optimizers()) opt->zero_grad();
}

std::vector<Tensor> Agent::critic_parameters() const {
  auto out = critics.q1.parameters();
  auto more = critics.q2.parameters();
  out.insert(out.end(), more.begin(), more.end());
  return out;
}

std::vector<Tensor> Agent::target_parameters() const {
  auto out = critics.q1_target.parameters();
  auto more = critics.q2_target.parameters();
  out.insert(out.end(), more.begin(), more.end());
  auto key = encoder.key.parameters();
  out.insert(out.end(), key.begin(), key.end());
  return out;
}

Vector critic_targets(const Agent& agent, const TransitionBatch& batch, Rng& noise) {
  NoGradGuard no_grad;
  const auto& cfg = agent.config();
  Tensor z_next = encode(agent.encoder, Tensor(batch.x_next), EncoderRole::kQuery);
  LqrSolution sol = solve_dare(agent.koopman, agent.lqr);
  PolicySample next = policy_sample(sol, z_next, agent.latent_reference(), agent.log_std, noise);
  Tensor z_next_key = encode(agent.encoder, Tensor(batch.x_next), EncoderRole::kKey);
  auto [q1, q2] = agent.critics.forward_target(z_next_key, next.control);
  const double alpha = agent.alpha();
  Vector y(batch.size());
  for (Index i = 0; i < batch.size(); ++i) {
    const double min_q = std::min(q1.value()(i, 0), q2.value()(i, 0));
    y(i) = critic_target_value(batch.r(i), batch.d(i), min_q, alpha * next.log_prob.value()(i, 0), cfg.gamma);
  }
  return y;
}

Tensor critic_loss(const Agent& agent, const TransitionBatch& batch, const Vector& targets) {
  Tensor z = encode(agent.encoder, Tensor(batch.x), EncoderRole::kQuery);
  auto [q1, q2] = agent.critics.forward(z, Tensor(batch.u));
  Tensor y = as_column(targets);
  return add(mean(square(sub(q1, y))), mean(square(sub(q2, y))));
}

ActorTerms actor_loss(const Agent& agent, const TransitionBatch& batch, Rng& noise) {
  Tensor z = encode(agent.encoder, Tensor(batch.x), EncoderRole::kQuery);
  LqrSolution sol = solve_dare(agent.koopman, agent.lqr);
  PolicySample s = policy_sample(sol, z, agent.latent_reference(), agent.log_std, noise);
  auto [q1, q2] = agent.critics.forward_frozen(z.detach(), s.control);
  Tensor loss = mean(sub(scale(s.log_prob, agent.alpha()), minimum(q1, q2)));
  return {loss, s.log_prob};
}

Tensor contrastive_objective(const Agent& agent, const TransitionBatch& batch, Rng& augment_rng) {
  const double eta = agent.config().eta;
  Matrix xq = augment(batch.x, eta, augment_rng);
  Matrix xk = augment(batch.x, eta, augment_rng);
  Tensor zq = encode(agent.encoder, Tensor(std::move(xq)), EncoderRole::kQuery);
  Tensor zk = encode(agent.encoder, Tensor(std::move(xk)), EncoderRole::kKey);
  return contrastive_loss(zq, zk, agent.encoder.similarity_w);
}

Tensor model_objective(const Agent& agent, const TransitionBatch& batch) {
  Tensor z, z_next;
  {
    NoGradGuard no_grad;
    z = encode(agent.encoder, Tensor(batch.x), EncoderRole::kQuery);
    z_next = encode(agent.encoder, Tensor(batch.x_next), EncoderRole::kQuery);
  }
  return model_loss(agent.koopman, z, Tensor(batch.u), z_next);
}

double update_temperature(Tensor& log_alpha, const Matrix& log_probs, double target_entropy, Adam& opt) {
  Matrix excess = (-log_probs.array() - target_entropy).matrix();
  Tensor loss = mean(scale_by(Tensor(std::move(excess)), exp(log_alpha)));
  opt.zero_grad();
  backward(loss);
  opt.step();
  opt.zero_grad();
  return loss.item();
}

LossReport update_step(Agent& agent, const TransitionBatch& batch, RngStreams& rngs) {
  const auto& cfg = agent.config();
  LossReport rep;
  agent.zero_all_grads();

  Vector y = critic_targets(agent, batch, rngs.actor_noise());
  Tensor lc = critic_loss(agent, batch, y);
  require_finite_loss("critic", lc);
  backward(lc);
  agent.critic_opt.step();
  agent.zero_all_grads();
  rep.critic = lc.item();

  ActorTerms actor = actor_loss(agent, batch, rngs.actor_noise());
  require_finite_loss("actor", actor.loss);
  backward(actor.loss);
  agent.actor_opt.step();
  agent.zero_all_grads();
  rep.actor = actor.loss.item();

  Tensor lcst = contrastive_objective(agent, batch, rngs.augment());
  require_finite_loss("contrastive", lcst);
  backward(lcst);
  agent.cst_opt.step();
  agent.zero_all_grads();
  rep.contrastive = lcst.item();

  Tensor lm = model_objective(agent, batch);
  require_finite_loss("model", lm);
  backward(lm);
  agent.model_opt.step();
  agent.zero_all_grads();
  rep.model = lm.item();

  momentum_update(agent.encoder, cfg.tau_ema);
  agent.critics.update_targets(cfg.critic_tau);

  const Matrix log_probs = actor.log_prob.value();
  rep.entropy = -log_probs.mean();
  rep.alpha_loss = update_temperature(agent.log_alpha, log_probs, agent.target_entropy(), agent.alpha_opt);
  rep.alpha = agent.alpha();
  return rep;
}

}  // namespace koopctl
