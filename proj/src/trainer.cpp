#include "koopctl/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <fcntl.h>
#include <fstream>
#include <numeric>
#include <sstream>
#include <unistd.h>

namespace koopctl {

namespace {

std::string fmt17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void store_mlp(Checkpoint& ck, const std::string& prefix, const Mlp& mlp) {
  for (std::size_t i = 0; i < mlp.layers().size(); ++i) {
    ck.add(prefix + "." + std::to_string(i) + ".w", mlp.layers()[i].weight.value());
    ck.add(prefix + "." + std::to_string(i) + ".b", mlp.layers()[i].bias.value());
  }
}

void assign(Tensor& t, const Matrix& m, const std::string& name) {
  if (t.rows() != m.rows() || t.cols() != m.cols()) {
    throw CheckpointError("checkpoint tensor '" + name + "' has shape [" + std::to_string(m.rows()) + "x" +
                          std::to_string(m.cols()) + "], expected " + t.shape_str());
  }
  t.leaf_value() = m;
}

void restore_mlp(const Checkpoint& ck, const std::string& prefix, Mlp& mlp) {
  for (std::size_t i = 0; i < mlp.layers().size(); ++i) {
    const std::string w = prefix + "." + std::to_string(i) + ".w";
    const std::string b = prefix + "." + std::to_string(i) + ".b";
    assign(mlp.layers()[i].weight, ck.tensor(w), w);
    assign(mlp.layers()[i].bias, ck.tensor(b), b);
  }
}

const char* kOptimizerNames[] = {"critic", "actor", "cst", "model", "alpha"};

double model_error_on(const EncoderParams& enc, const KoopmanModel& koop, const TransitionBatch& b) {
  NoGradGuard no_grad;
  Tensor z = encode(enc, Tensor(b.x), EncoderRole::kQuery);
  Tensor zn = encode(enc, Tensor(b.x_next), EncoderRole::kQuery);
  return model_loss(koop, z, Tensor(b.u), zn).item();
}

}  // namespace

std::string metrics_row(const EpisodeMetrics& m) {
  return std::to_string(m.step) + "," + std::to_string(m.episode) + "," + fmt17(m.ret) + "," + fmt17(m.loss_sac) +
         "," + fmt17(m.loss_cst) + "," + fmt17(m.loss_m) + "," + fmt17(m.model_error) + "," + fmt17(m.wall_ms);
}

std::vector<EpisodeMetrics> read_metrics(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read metrics file " + path.string());
  std::string line;
  std::getline(in, line);
  if (line != kMetricsHeader) throw IoError("unexpected metrics header in " + path.string());
  std::vector<EpisodeMetrics> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    EpisodeMetrics m;
    char comma;
    std::istringstream ls(line);
    ls >> m.step >> comma >> m.episode >> comma >> m.ret >> comma >> m.loss_sac >> comma >> m.loss_cst >> comma >>
        m.loss_m >> comma >> m.model_error >> comma >> m.wall_ms;
    if (!ls) throw IoError("malformed metrics row in " + path.string());
    out.push_back(m);
  }
  return out;
}

double EvalSummary::mean_return() const {
  if (episodes.empty()) return 0.0;
  double s = 0.0;
  for (const auto& e : episodes) s += e.ret;
  return s / static_cast<double>(episodes.size());
}

double EvalSummary::std_return() const {
  if (episodes.size() < 2) return 0.0;
  const double mu = mean_return();
  double s = 0.0;
  for (const auto& e : episodes) s += (e.ret - mu) * (e.ret - mu);
  return std::sqrt(s / static_cast<double>(episodes.size() - 1));
}

long EvalSummary::balanced_count() const {
  long n = 0;
  for (const auto& e : episodes) n += e.balanced ? 1 : 0;
  return n;
}

std::uint64_t eval_reset_seed(std::uint64_t run_seed, long episode) {
  return derive_seed(run_seed, "eval") + static_cast<std::uint64_t>(episode);
}

EvalSummary evaluate(const Environment& env, const Policy& policy, long episodes, std::uint64_t seed) {
  EvalSummary out;
  constexpr long kTail = 100;
  for (long ep = 0; ep < episodes; ++ep) {
    EvalEpisode e;
    Vector s = env.reset(eval_reset_seed(seed, ep));
    double tail_max = 0.0;
    bool terminated = false;
    for (long t = 0; t < Environment::kEpisodeSteps; ++t) {
      StepResult r = env.step(s, policy(env.observe(s)));
      e.ret += r.reward;
      ++e.steps;
      s = std::move(r.next_state);
      if (t >= Environment::kEpisodeSteps - kTail) tail_max = std::max(tail_max, std::abs(env.pole_angle(s)));
      if (r.done) {
        terminated = true;
        break;
      }
    }
    e.final_max_abs_angle = tail_max;
    e.balanced = !terminated && tail_max < 0.2;
    out.episodes.push_back(e);
  }
  return out;
}

Policy deterministic_policy(const Agent& agent, const PolicySnapshot& snap) {
  return [&agent, snap](const Vector& obs) { return agent.act(snap, obs, nullptr); };
}

void store_agent(Checkpoint& ck, Agent& agent) {
  store_mlp(ck, "encoder.query", agent.encoder.query);
  store_mlp(ck, "encoder.key", agent.encoder.key);
  ck.add("encoder.W", agent.encoder.similarity_w.value());
  ck.add("koopman.A", agent.koopman.a.value());
  ck.add("koopman.B", agent.koopman.b.value());
  ck.add("lqr.q_raw", agent.lqr.q_raw.value());
  ck.add("lqr.r_raw", agent.lqr.r_raw.value());
  ck.add("policy.log_std", agent.log_std.value());
  ck.add("sac.log_alpha", agent.log_alpha.value());
  store_mlp(ck, "critic.q1", agent.critics.q1);
  store_mlp(ck, "critic.q2", agent.critics.q2);
  store_mlp(ck, "critic.q1_target", agent.critics.q1_target);
  store_mlp(ck, "critic.q2_target", agent.critics.q2_target);
  auto opts = agent.optimizers();
  for (std::size_t k = 0; k < opts.size(); ++k) {
    const std::string base = std::string("optim.") + kOptimizerNames[k];
    ck.add_scalar(base + ".t", opts[k]->step_count());
    const auto& slots = opts[k]->slots();
    for (std::size_t i = 0; i < slots.size(); ++i) {
      ck.add(base + "." + std::to_string(i) + ".m", slots[i].m);
      ck.add(base + "." + std::to_string(i) + ".v", slots[i].v);
    }
  }
}

void restore_agent(const Checkpoint& ck, Agent& agent) {
  restore_mlp(ck, "encoder.query", agent.encoder.query);
  restore_mlp(ck, "encoder.key", agent.encoder.key);
  assign(agent.encoder.similarity_w, ck.tensor("encoder.W"), "encoder.W");
  assign(agent.koopman.a, ck.tensor("koopman.A"), "koopman.A");
  assign(agent.koopman.b, ck.tensor("koopman.B"), "koopman.B");
  assign(agent.lqr.q_raw, ck.tensor("lqr.q_raw"), "lqr.q_raw");
  assign(agent.lqr.r_raw, ck.tensor("lqr.r_raw"), "lqr.r_raw");
  assign(agent.log_std, ck.tensor("policy.log_std"), "policy.log_std");
  assign(agent.log_alpha, ck.tensor("sac.log_alpha"), "sac.log_alpha");
  restore_mlp(ck, "critic.q1", agent.critics.q1);
  restore_mlp(ck, "critic.q2", agent.critics.q2);
  restore_mlp(ck, "critic.q1_target", agent.critics.q1_target);
  restore_mlp(ck, "critic.q2_target", agent.critics.q2_target);
  auto opts = agent.optimizers();
  for (std::size_t k = 0; k < opts.size(); ++k) {
    const std::string base = std::string("optim.") + kOptimizerNames[k];
    opts[k]->set_step_count(ck.scalar(base + ".t"));
    auto& slots = opts[k]->slots();
    for (std::size_t i = 0; i < slots.size(); ++i) {
      const Matrix& m = ck.tensor(base + "." + std::to_string(i) + ".m");
      const Matrix& v = ck.tensor(base + "." + std::to_string(i) + ".v");
      if (m.rows() != slots[i].m.rows() || m.cols() != slots[i].m.cols() || v.rows() != m.rows() ||
          v.cols() != m.cols()) {
        throw CheckpointError("checkpoint optimizer state '" + base + "' has the wrong shape");
      }
      slots[i].m = m;
      slots[i].v = v;
    }
  }
}

std::unique_ptr<Agent> load_agent(const Checkpoint& ck, Config* cfg_out) {
  Config cfg;
  try {
    cfg = parse_config(ck.config_text);
    cfg.validate();
  } catch (const ConfigError& e) {
    throw CheckpointError(std::string("checkpoint config is invalid: ") + e.what());
  }
  auto env = make_env(cfg.env);
  Rng scratch(0);
  auto agent = std::make_unique<Agent>(cfg, env->observation_dim(), env->control_dim(),
                                       env->observe(env->goal_state()), scratch);
  restore_agent(ck, *agent);
  if (cfg_out != nullptr) *cfg_out = cfg;
  return agent;
}

DirectoryLock::DirectoryLock(const std::filesystem::path& dir) : path_(dir / ".lock") {
  std::filesystem::create_directories(dir);
  const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
  if (fd < 0) {
    throw IoError("output directory " + dir.string() + " is locked by another run (" + path_.string() + ")");
  }
  const std::string pid = std::to_string(::getpid()) + "\n";
  [[maybe_unused]] auto n = ::write(fd, pid.data(), pid.size());
  ::close(fd);
}

DirectoryLock::~DirectoryLock() {
  std::error_code ec;
  std::filesystem::remove(path_, ec);
}

Trainer::Trainer(Config cfg)
    : cfg_(std::move(cfg)),
      env_((cfg_.validate(), make_env(cfg_.env))),
      rngs_(cfg_.seed),
      buffer_(env_->observation_dim(), env_->control_dim(), cfg_.buffer_capacity) {
  if (cfg_.control_dim != 0 && cfg_.control_dim != env_->control_dim()) {
    throw ConfigError("control_dim", "config field 'control_dim' does not match the environment");
  }
  agent_ = std::make_unique<Agent>(cfg_, env_->observation_dim(), env_->control_dim(),
                                   env_->observe(env_->goal_state()), rngs_.init());
  snapshot_ = agent_->snapshot();
  started_ = std::chrono::steady_clock::now();
  start_episode();
}

Trainer Trainer::resume(const std::filesystem::path& checkpoint, std::optional<long> total_steps) {
  Checkpoint ck = Checkpoint::load(checkpoint);
  if (ck.kind != "trainer") throw CheckpointError("checkpoint kind '" + ck.kind + "' cannot resume training");
  Config cfg;
  try {
    cfg = parse_config(ck.config_text);
  } catch (const ConfigError& e) {
    throw CheckpointError(std::string("checkpoint config is invalid: ") + e.what());
  }
  if (total_steps) cfg.total_steps = *total_steps;
  Trainer t(cfg);
  restore_agent(ck, *t.agent_);
  t.rngs_.deserialize(ck.rng_text);
  t.buffer_.import_rows(ck.tensor("buffer.rows"), ck.scalar("buffer.cursor"));
  t.state_ = ck.tensor("trainer.state").col(0);
  t.step_ = ck.scalar("trainer.step");
  t.episode_ = ck.scalar("trainer.episode");
  t.ep_step_ = ck.scalar("trainer.ep_step");
  t.ep_updates_ = ck.scalar("trainer.ep_updates");
  const Matrix& acc = ck.tensor("trainer.accumulators");
  if (acc.size() != 4) throw CheckpointError("checkpoint tensor 'trainer.accumulators' must hold 4 values");
  t.ep_return_ = acc(0, 0);
  t.ep_sac_ = acc(1, 0);
  t.ep_cst_ = acc(2, 0);
  t.ep_m_ = acc(3, 0);
  const Matrix& rows = ck.tensor("trainer.metrics");
  t.metrics_.clear();
  for (Index i = 0; i < rows.rows(); ++i) {
    t.metrics_.push_back({static_cast<long>(rows(i, 0)), static_cast<long>(rows(i, 1)), rows(i, 2), rows(i, 3),
                          rows(i, 4), rows(i, 5), rows(i, 6), rows(i, 7)});
  }
  t.snapshot_ = t.agent_->snapshot();
  return t;
}

Checkpoint Trainer::make_checkpoint() {
  Checkpoint ck;
  ck.kind = "trainer";
  ck.config_text = cfg_.to_text();
  ck.rng_text = rngs_.serialize();
  ck.add_scalar("trainer.step", step_);
  ck.add_scalar("trainer.episode", episode_);
  ck.add_scalar("trainer.ep_step", ep_step_);
  ck.add_scalar("trainer.ep_updates", ep_updates_);
  ck.add_scalar("buffer.cursor", buffer_.cursor());
  store_agent(ck, *agent_);
  ck.add("trainer.state", Matrix(state_));
  Matrix acc(4, 1);
  acc << ep_return_, ep_sac_, ep_cst_, ep_m_;
  ck.add("trainer.accumulators", acc);
  Matrix rows(static_cast<Index>(metrics_.size()), 8);
  for (std::size_t i = 0; i < metrics_.size(); ++i) {
    const auto& m = metrics_[i];
    rows.row(static_cast<Index>(i)) << static_cast<double>(m.step), static_cast<double>(m.episode), m.ret,
        m.loss_sac, m.loss_cst, m.loss_m, m.model_error, m.wall_ms;
  }
  ck.add("trainer.metrics", rows);
  ck.add("buffer.rows", buffer_.export_rows());
  return ck;
}

std::filesystem::path Trainer::save_checkpoint(const std::filesystem::path& stem) {
  Checkpoint ck = make_checkpoint();
  if (cfg_.eval_episodes > 0) {
    EvalSummary ev = evaluate(*env_, deterministic_policy(*agent_, snapshot_), cfg_.eval_episodes, cfg_.seed);
    Matrix logged(2, 1);
    logged << ev.mean_return(), ev.std_return();
    ck.add("log.eval_return", logged);
  }
  return ck.save(stem);
}

void Trainer::start_episode() {
  state_ = env_->reset(rngs_.env()());
  ep_step_ = 0;
  ep_return_ = 0.0;
  ep_sac_ = ep_cst_ = ep_m_ = 0.0;
  ep_updates_ = 0;
}

double Trainer::episode_model_error(long transitions) const {
  if (transitions < 1) return 0.0;
  return model_error_on(agent_->encoder, agent_->koopman, buffer_.latest(transitions));
}

void Trainer::finish_episode() {
  EpisodeMetrics m;
  m.step = step_;
  m.episode = episode_;
  m.ret = ep_return_;
  if (ep_updates_ > 0) {
    const double n = static_cast<double>(ep_updates_);
    m.loss_sac = ep_sac_ / n;
    m.loss_cst = ep_cst_ / n;
    m.loss_m = ep_m_ / n;
  }
  m.model_error = episode_model_error(ep_step_);
  if (cfg_.log_wall_time) {
    m.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started_).count();
  }
  metrics_.push_back(m);
  if (writes_files_) append_metrics_row(m);
  ++episode_;
  start_episode();
}

void Trainer::env_step() {
  Vector obs = env_->observe(state_);
  Vector u(env_->control_dim());
  if (step_ < cfg_.warmup_steps) {
    for (Index j = 0; j < u.size(); ++j) u(j) = uniform(rngs_.actor_noise(), -1.0, 1.0);
  } else {
    u = agent_->act(snapshot_, obs, &rngs_.actor_noise());
  }
  StepResult res = env_->step(state_, u);
  buffer_.push({obs, u, env_->observe(res.next_state), res.reward, res.done ? 1.0 : 0.0});
  ep_return_ += res.reward;
  ++step_;
  ++ep_step_;
  state_ = std::move(res.next_state);

  if (step_ >= cfg_.warmup_steps) {
    TransitionBatch batch = buffer_.sample(cfg_.batch_size, rngs_.buffer_sampler());
    LossReport rep = update_step(*agent_, batch, rngs_);
    ep_sac_ += rep.actor;
    ep_cst_ += rep.contrastive;
    ep_m_ += rep.model;
    ++ep_updates_;
    snapshot_ = agent_->snapshot();
  }

  if (res.done || ep_step_ >= Environment::kEpisodeSteps) finish_episode();

  if (writes_files_ && cfg_.checkpoint_every > 0 && step_ % cfg_.checkpoint_every == 0) {
    save_checkpoint(cfg_.output_dir() / "checkpoints" / ("step_" + std::to_string(step_)));
  }
}

void Trainer::advance(long n) {
  const bool saved = writes_files_;
  writes_files_ = false;
  try {
    for (long i = 0; i < n; ++i) env_step();
  } catch (...) {
    writes_files_ = saved;
    throw;
  }
  writes_files_ = saved;
}

void Trainer::rewrite_metrics_file() const {
  std::ofstream out(metrics_path(), std::ios::trunc);
  if (!out) throw IoError("cannot write metrics file " + metrics_path().string());
  out << kMetricsHeader << "\n";
  for (const auto& m : metrics_) out << metrics_row(m) << "\n";
}

void Trainer::append_metrics_row(const EpisodeMetrics& m) const {
  std::ofstream out(metrics_path(), std::ios::app);
  if (!out) throw IoError("cannot append to metrics file " + metrics_path().string());
  out << metrics_row(m) << "\n";
}

TrainingRun Trainer::run() {
  const auto dir = cfg_.output_dir();
  DirectoryLock lock(dir);
  {
    std::ofstream cfg_out(dir / "config.txt", std::ios::trunc);
    cfg_out << cfg_.to_text();
  }
  rewrite_metrics_file();
  started_ = std::chrono::steady_clock::now();
  try {
    while (step_ < cfg_.total_steps) env_step();
  } catch (const std::exception&) {
    try {
      make_checkpoint().save(dir / "checkpoints" / "crash");
    } catch (...) {
    }
    throw;
  }
  TrainingRun run;
  run.out_dir = dir;
  run.final_checkpoint = save_checkpoint(dir / "checkpoints" / "final");
  if (cfg_.eval_episodes > 0) {
    run.final_eval = evaluate(*env_, deterministic_policy(*agent_, snapshot_), cfg_.eval_episodes, cfg_.seed);
    std::ofstream ev(dir / "eval.csv", std::ios::trunc);
    ev << "episode,return,steps,balanced,final_max_abs_angle\n";
    for (std::size_t i = 0; i < run.final_eval.episodes.size(); ++i) {
      const auto& e = run.final_eval.episodes[i];
      ev << i << "," << fmt17(e.ret) << "," << e.steps << "," << (e.balanced ? 1 : 0) << ","
         << fmt17(e.final_max_abs_angle) << "\n";
    }
  }
  run.episodes = metrics_;
  return run;
}

TrainingRun train(const Config& cfg) { return Trainer(cfg).run(); }

KoopmanModel perturb_model(const KoopmanModel& model, double scale, Rng& rng) {
  const Index d = model.latent_dim();
  const Index m = model.control_dim();
  Matrix e(d, d + m);
  for (Index c = 0; c < e.cols(); ++c) {
    for (Index r = 0; r < d; ++r) e(r, c) = standard_normal(rng);
  }
  const double norm = e.norm();
  if (norm > 0.0) e *= scale / norm;
  return {Tensor(Matrix(model.a.value() + e.leftCols(d))), Tensor(Matrix(model.b.value() + e.rightCols(m)))};
}

TwoStageModel fit_two_stage_model(const Config& cfg, const Environment& env) {
  RngStreams rngs(derive_seed(cfg.seed, "two-stage"));
  const Index n = env.observation_dim();
  const Index m = env.control_dim();
  ReplayBuffer data(n, m, std::max<long>(1, cfg.baseline_data_steps));
  Vector s = env.reset(rngs.env()());
  long ep_step = 0;
  for (long k = 0; k < cfg.baseline_data_steps; ++k) {
    Vector u(m);
    for (Index j = 0; j < m; ++j) u(j) = uniform(rngs.actor_noise(), -1.0, 1.0);
    Vector obs = env.observe(s);
    StepResult r = env.step(s, u);
    data.push({obs, u, env.observe(r.next_state), r.reward, r.done ? 1.0 : 0.0});
    s = std::move(r.next_state);
    if (r.done || ++ep_step >= Environment::kEpisodeSteps) {
      s = env.reset(rngs.env()());
      ep_step = 0;
    }
  }

  TwoStageModel out;
  out.encoder = make_encoder(n, cfg.latent_dim, rngs.init(), cfg.hidden_dim);
  KoopmanModel koop = make_koopman(cfg.latent_dim, m, rngs.init());
  Adam cst_opt, pred_opt;
  cst_opt.add(out.encoder.query.parameters(), cfg.lr_encoder);
  cst_opt.add(out.encoder.similarity_w, cfg.lr_encoder);
  pred_opt.add(out.encoder.query.parameters(), cfg.lr_encoder);
  pred_opt.add({koop.a, koop.b}, cfg.lr_koopman);

  if (data.size() > 0) {
    for (long k = 0; k < cfg.baseline_train_steps; ++k) {
      TransitionBatch b = data.sample(cfg.batch_size, rngs.buffer_sampler());
      if (cfg.baseline_use_cst) {
        Matrix xq = augment(b.x, cfg.eta, rngs.augment());
        Matrix xk = augment(b.x, cfg.eta, rngs.augment());
        Tensor l = contrastive_loss(encode(out.encoder, Tensor(std::move(xq)), EncoderRole::kQuery),
                                    encode(out.encoder, Tensor(std::move(xk)), EncoderRole::kKey),
                                    out.encoder.similarity_w);
        cst_opt.zero_grad();
        pred_opt.zero_grad();
        backward(l);
        cst_opt.step();
      }
      Tensor zn;
      {
        NoGradGuard no_grad;
        zn = encode(out.encoder, Tensor(b.x_next), EncoderRole::kQuery);
      }
      Tensor l = model_loss(koop, encode(out.encoder, Tensor(b.x), EncoderRole::kQuery), Tensor(b.u), zn);
      if (!std::isfinite(l.item())) throw TrainingError("model", "non-finite model loss in two-stage baseline");
      cst_opt.zero_grad();
      pred_opt.zero_grad();
      backward(l);
      pred_opt.step();
      momentum_update(out.encoder, cfg.tau_ema);
    }
    cst_opt.zero_grad();
    pred_opt.zero_grad();

    std::vector<Index> all(static_cast<std::size_t>(data.size()));
    std::iota(all.begin(), all.end(), Index{0});
    TransitionBatch b = data.gather(all);
    NoGradGuard no_grad;
    Matrix z = encode(out.encoder, Tensor(b.x), EncoderRole::kQuery).value();
    Matrix zn = encode(out.encoder, Tensor(b.x_next), EncoderRole::kQuery).value();
    if (data.size() >= cfg.latent_dim + m) {
      out.koopman = fit_least_squares(z, b.u, zn, cfg.ridge);
    } else {
      out.koopman = {koop.a.detach(), koop.b.detach()};
    }
    out.model_error = model_loss(out.koopman, Tensor(z), Tensor(b.u), Tensor(zn)).item();
  } else {
    out.koopman = {koop.a.detach(), koop.b.detach()};
  }
  out.goal_obs = env.observe(env.goal_state()).transpose();
  return out;
}

Vector LinearController::operator()(const Vector& obs) const {
  NoGradGuard no_grad;
  Tensor z = encode(encoder, Tensor(Matrix(obs.transpose())), EncoderRole::kQuery);
  return -gain * (z.value().row(0).transpose() - z_ref);
}

LinearController design_baseline_controller(const TwoStageModel& model, const KoopmanModel& koopman,
                                            const Vector& q_diag, const Vector& r_diag, int iterations) {
  NoGradGuard no_grad;
  LqrSolution sol = solve_dare(koopman, Tensor(Matrix(q_diag)), Tensor(Matrix(r_diag)), iterations);
  LinearController c;
  c.encoder = model.encoder;
  c.gain = sol.g.value();
  c.z_ref = encode(model.encoder, Tensor(model.goal_obs), EncoderRole::kQuery).value().row(0).transpose();
  return c;
}

BaselineRun train_two_stage_baseline(const Config& cfg) {
  cfg.validate();
  auto env = make_env(cfg.env);
  BaselineRun run;
  run.model = fit_two_stage_model(cfg, *env);
  KoopmanModel koop = run.model.koopman;
  if (cfg.perturb_scale > 0.0) {
    Rng rng(derive_seed(cfg.seed, "perturb"));
    koop = perturb_model(koop, cfg.perturb_scale, rng);
  }
  const auto q = cfg.baseline_q_values(cfg.latent_dim);
  const auto r = cfg.baseline_r_values(env->control_dim());
  Vector qv = Eigen::Map<const Vector>(q.data(), static_cast<Index>(q.size()));
  Vector rv = Eigen::Map<const Vector>(r.data(), static_cast<Index>(r.size()));
  run.controller = design_baseline_controller(run.model, koop, qv, rv, static_cast<int>(cfg.dare_iters_eval));
  if (cfg.zref_mode == "zero") run.controller.z_ref.setZero();
  run.eval = evaluate(*env, std::cref(run.controller), cfg.eval_episodes, cfg.seed);
  run.total_cost = -run.eval.mean_return();
  return run;
}

}  // namespace koopctl
