#pragma once

#include <complex>
#include <filesystem>
#include <vector>

#include "koopctl/lqr.hpp"
#include "koopctl/trainer.hpp"

namespace koopctl {

/// Numerical rank of [B, AB, ..., A^{d-1} B] (relative tol 1e-8).
Index controllability_rank(const KoopmanModel& model);

struct StabilityReport {
  std::vector<std::complex<double>> open_poles;    // eig(A)
  std::vector<std::complex<double>> closed_poles;  // eig(A - B G)
  double open_radius = 0.0;
  double closed_radius = 0.0;
};

StabilityReport stability_report(const KoopmanModel& model, const LqrSolution& sol);
/// Columns: kind,index,real,imag,modulus (kind is open or closed).
void write_stability_csv(const StabilityReport& report, const std::filesystem::path& path);

/// Observations x_0..x_{T-1} and the controls applied between them.
struct Trajectory {
  Matrix observations;  // [T x n]
  Matrix controls;      // [(T-1) x m]
  Index length() const { return observations.rows(); }
};

/// One episode under `policy`, at most `steps` transitions.
Trajectory rollout(const Environment& env, const Policy& policy, std::uint64_t reset_seed,
                   long steps = Environment::kEpisodeSteps);

struct ModelError {
  double mean = 0.0;
  Vector per_step;  // ||psi(x_{k+1}) - A z_k - B u_k||^2
};

/// Throws UsageError when the trajectory has fewer than 2 observations.
ModelError eval_model_error(const KoopmanModel& model, const EncoderParams& encoder, const Trajectory& traj);
/// Columns: step,error
void write_model_error_csv(const ModelError& err, const std::filesystem::path& path);

/// Columns: step,kind,z_0..z_{d-1}. For each step k one `true` row (psi(x_{k+1}))
/// followed by one `pred` row (A z_k + B u_k). Episode i resets with eval_reset_seed(seed, i).
void export_latent_trajectories(const KoopmanModel& model, const EncoderParams& encoder, const Environment& env,
                                const Policy& policy, long episodes, std::uint64_t seed,
                                const std::filesystem::path& path);

/// Columns: kind,index,value with kind q or r; values are the effective diagonals.
void export_learned_q(const LqrParams& params, const std::filesystem::path& path);

struct CostDiagonals {
  Vector q;
  Vector r;
};
CostDiagonals read_learned_q(const std::filesystem::path& path);

struct AnalysisReport {
  std::vector<std::complex<double>> poles;
  double spectral_radius = 0.0;
  double closed_loop_spectral_radius = 0.0;
  Index controllability_rank = 0;
  Index latent_dim = 0;
  double mean_model_error = 0.0;
  std::vector<double> q_diagonal;
  double total_eval_cost = 0.0;
};

/// `key = value` lines; lists are space separated, complex poles as re:im.
void write_report(const AnalysisReport& report, const std::filesystem::path& path);
AnalysisReport read_report(const std::filesystem::path& path);

/// Full analysis of a trained agent, writing report.txt, poles.csv,
/// model_error.csv, learned_q.csv and latents.csv into `out_dir`.
AnalysisReport analyze_agent(Agent& agent, const Config& cfg, const std::filesystem::path& out_dir,
                             long latent_episodes = 1);

}  // namespace koopctl
