#pragma once

#include <chrono>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "koopctl/checkpoint.hpp"
#include "koopctl/envs.hpp"
#include "koopctl/sac.hpp"

namespace koopctl {

/// One row of the metrics stream.
struct EpisodeMetrics {
  long step = 0;
  long episode = 0;
  double ret = 0.0;
  double loss_sac = 0.0;
  double loss_cst = 0.0;
  double loss_m = 0.0;
  double model_error = 0.0;
  double wall_ms = 0.0;
};

inline constexpr const char* kMetricsHeader = "step,episode,return,loss_sac,loss_cst,loss_m,model_error,wall_ms";
std::string metrics_row(const EpisodeMetrics& m);
std::vector<EpisodeMetrics> read_metrics(const std::filesystem::path& path);

using Policy = std::function<Vector(const Vector& obs)>;

struct EvalEpisode {
  double ret = 0.0;
  long steps = 0;
  bool balanced = false;          // |theta| < 0.2 rad over the final 100 steps
  double final_max_abs_angle = 0.0;
};

struct EvalSummary {
  std::vector<EvalEpisode> episodes;
  double mean_return() const;
  double std_return() const;
  long balanced_count() const;
};

/// Seed of the i-th evaluation reset; shared by every evaluation of a run.
std::uint64_t eval_reset_seed(std::uint64_t run_seed, long episode);

/// Full-length episodes driven by `policy`; resets use eval_reset_seed.
EvalSummary evaluate(const Environment& env, const Policy& policy, long episodes, std::uint64_t seed);

/// tanh(mean) of the agent's LQR policy under `snap`.
Policy deterministic_policy(const Agent& agent, const PolicySnapshot& snap);

/// Trainer state <-> checkpoint. Agent-only helpers serve eval/analyze.
void store_agent(Checkpoint& ck, Agent& agent);
void restore_agent(const Checkpoint& ck, Agent& agent);
std::unique_ptr<Agent> load_agent(const Checkpoint& ck, Config* cfg_out = nullptr);

struct TrainingRun {
  std::vector<EpisodeMetrics> episodes;
  std::filesystem::path out_dir;
  std::filesystem::path final_checkpoint;
  EvalSummary final_eval;
};

/// Exclusive marker file for an output directory; removed on destruction.
class DirectoryLock {
 public:
  explicit DirectoryLock(const std::filesystem::path& dir);
  ~DirectoryLock();
  DirectoryLock(const DirectoryLock&) = delete;
  DirectoryLock& operator=(const DirectoryLock&) = delete;

 private:
  std::filesystem::path path_;
};

/// End-to-end task-oriented training loop.
///
/// Each environment step: act (uniform random during warmup, otherwise the
/// stochastic LQR policy), store the transition, and once past warmup run one
/// update_step on a sampled batch. Episodes end at the step limit or on
/// termination; each writes one metrics row. Checkpoints every
/// `checkpoint_every` steps capture the complete state, so a resumed run is
/// bitwise identical to an uninterrupted one.
class Trainer {
 public:
  explicit Trainer(Config cfg);
  static Trainer resume(const std::filesystem::path& checkpoint, std::optional<long> total_steps = {});

  /// Runs until cfg.total_steps environment steps have been taken.
  TrainingRun run();
  /// Advances exactly n environment steps (used by tests); no lock, no final eval.
  void advance(long n);

  Checkpoint make_checkpoint();
  std::filesystem::path save_checkpoint(const std::filesystem::path& stem);

  const Config& config() const { return cfg_; }
  Agent& agent() { return *agent_; }
  const Environment& env() const { return *env_; }
  const ReplayBuffer& buffer() const { return buffer_; }
  long step() const { return step_; }
  const std::vector<EpisodeMetrics>& metrics() const { return metrics_; }
  std::filesystem::path metrics_path() const { return cfg_.output_dir() / "metrics.csv"; }

 private:
  void env_step();
  void finish_episode();
  void start_episode();
  void rewrite_metrics_file() const;
  void append_metrics_row(const EpisodeMetrics& m) const;
  double episode_model_error(long transitions) const;

  Config cfg_;
  std::unique_ptr<Environment> env_;
  RngStreams rngs_;
  std::unique_ptr<Agent> agent_;
  ReplayBuffer buffer_;
  PolicySnapshot snapshot_;

  Vector state_;
  long step_ = 0;
  long episode_ = 0;
  long ep_step_ = 0;
  double ep_return_ = 0.0;
  double ep_sac_ = 0.0, ep_cst_ = 0.0, ep_m_ = 0.0;
  long ep_updates_ = 0;
  std::vector<EpisodeMetrics> metrics_;
  std::chrono::steady_clock::time_point started_;
  bool writes_files_ = true;
};

TrainingRun train(const Config& cfg);

/// Perturbation with Frobenius norm `scale` spread over [A B] (Gaussian direction).
KoopmanModel perturb_model(const KoopmanModel& model, double scale, Rng& rng);

/// Output of stage 1 of the two-stage baseline.
struct TwoStageModel {
  EncoderParams encoder;
  KoopmanModel koopman;  // closed-form refit on the encoded data
  double model_error = 0.0;
  Matrix goal_obs;       // [1 x n]
};

/// Stage 1: random-policy data, encoder trained by the contrastive loss and
/// by the prediction loss through z_k, then a ridge refit of A, B.
TwoStageModel fit_two_stage_model(const Config& cfg, const Environment& env);

/// Stage 2 controller: converged DARE with fixed diagonal Q, R; u = -G (z - z_ref).
struct LinearController {
  EncoderParams encoder;
  Matrix gain;
  Vector z_ref;
  Vector operator()(const Vector& obs) const;
};
LinearController design_baseline_controller(const TwoStageModel& model, const KoopmanModel& koopman,
                                            const Vector& q_diag, const Vector& r_diag, int iterations);

struct BaselineRun {
  TwoStageModel model;
  LinearController controller;
  EvalSummary eval;
  double total_cost = 0.0;  // negated mean return
};

/// Both stages plus evaluation; perturbation (cfg.perturb_scale) applied before stage 2.
BaselineRun train_two_stage_baseline(const Config& cfg);

}  // namespace koopctl
