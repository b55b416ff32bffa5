#include "koopctl/analysis.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "koopctl/linalg.hpp"

namespace koopctl {

namespace {

std::string g17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::ofstream open_csv(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

void check_written(const std::ofstream& out, const std::filesystem::path& path) {
  if (!out) throw IoError("failed writing " + path.string());
}

Matrix encode_rows(const EncoderParams& encoder, const Matrix& x) {
  NoGradGuard no_grad;
  return encode(encoder, Tensor(x), EncoderRole::kQuery).value();
}

double radius(const std::vector<std::complex<double>>& poles) {
  double r = 0.0;
  for (const auto& p : poles) r = std::max(r, std::abs(p));
  return r;
}

}  // namespace

Index controllability_rank(const KoopmanModel& model) {
  return numerical_rank(controllability_matrix(model.a.value(), model.b.value()));
}

StabilityReport stability_report(const KoopmanModel& model, const LqrSolution& sol) {
  StabilityReport r;
  r.open_poles = eigenvalues(model.a.value());
  const Matrix closed = model.a.value() - model.b.value() * sol.g.value();
  r.closed_poles = eigenvalues(closed);
  r.open_radius = radius(r.open_poles);
  r.closed_radius = radius(r.closed_poles);
  return r;
}

void write_stability_csv(const StabilityReport& report, const std::filesystem::path& path) {
  auto out = open_csv(path);
  out << "kind,index,real,imag,modulus\n";
  auto rows = [&](const char* kind, const std::vector<std::complex<double>>& poles) {
    for (std::size_t i = 0; i < poles.size(); ++i) {
      out << kind << "," << i << "," << g17(poles[i].real()) << "," << g17(poles[i].imag()) << ","
          << g17(std::abs(poles[i])) << "\n";
    }
  };
  rows("open", report.open_poles);
  rows("closed", report.closed_poles);
  check_written(out, path);
}

Trajectory rollout(const Environment& env, const Policy& policy, std::uint64_t reset_seed, long steps) {
  std::vector<Vector> obs;
  std::vector<Vector> us;
  Vector s = env.reset(reset_seed);
  obs.push_back(env.observe(s));
  for (long t = 0; t < steps; ++t) {
    Vector u = policy(obs.back());
    StepResult r = env.step(s, u);
    us.push_back(std::move(u));
    s = std::move(r.next_state);
    obs.push_back(env.observe(s));
    if (r.done) break;
  }
  Trajectory traj;
  traj.observations.resize(static_cast<Index>(obs.size()), env.observation_dim());
  for (std::size_t i = 0; i < obs.size(); ++i) traj.observations.row(static_cast<Index>(i)) = obs[i].transpose();
  traj.controls.resize(static_cast<Index>(us.size()), env.control_dim());
  for (std::size_t i = 0; i < us.size(); ++i) traj.controls.row(static_cast<Index>(i)) = us[i].transpose();
  return traj;
}

ModelError eval_model_error(const KoopmanModel& model, const EncoderParams& encoder, const Trajectory& traj) {
  const Index t = traj.length();
  if (t < 2) throw UsageError("eval_model_error: trajectory needs at least 2 observations, got " + std::to_string(t));
  if (traj.controls.rows() != t - 1) {
    throw DimensionError("eval_model_error: " + std::to_string(traj.controls.rows()) + " controls for " +
                         std::to_string(t) + " observations");
  }
  const Matrix z = encode_rows(encoder, traj.observations);
  const Matrix pred =
      z.topRows(t - 1) * model.a.value().transpose() + traj.controls * model.b.value().transpose();
  ModelError err;
  err.per_step = (z.bottomRows(t - 1) - pred).rowwise().squaredNorm();
  err.mean = err.per_step.sum() / static_cast<double>(t - 1);
  return err;
}

void write_model_error_csv(const ModelError& err, const std::filesystem::path& path) {
  auto out = open_csv(path);
  out << "step,error\n";
  for (Index k = 0; k < err.per_step.size(); ++k) out << k << "," << g17(err.per_step(k)) << "\n";
  check_written(out, path);
}

void export_latent_trajectories(const KoopmanModel& model, const EncoderParams& encoder, const Environment& env,
                                const Policy& policy, long episodes, std::uint64_t seed,
                                const std::filesystem::path& path) {
  auto out = open_csv(path);
  const Index d = model.latent_dim();
  out << "step,kind";
  for (Index j = 0; j < d; ++j) out << ",z_" << j;
  out << "\n";
  auto row = [&](Index step, const char* kind, const auto& z) {
    out << step << "," << kind;
    for (Index j = 0; j < z.size(); ++j) out << "," << g17(z(j));
    out << "\n";
  };
  for (long ep = 0; ep < episodes; ++ep) {
    Trajectory traj = rollout(env, policy, eval_reset_seed(seed, ep));
    const Index t = traj.length();
    if (t < 2) continue;
    const Matrix z = encode_rows(encoder, traj.observations);
    const Matrix pred =
        z.topRows(t - 1) * model.a.value().transpose() + traj.controls * model.b.value().transpose();
    for (Index k = 0; k + 1 < t; ++k) {
      row(k, "true", z.row(k + 1));
      row(k, "pred", pred.row(k));
    }
  }
  check_written(out, path);
}

void export_learned_q(const LqrParams& params, const std::filesystem::path& path) {
  NoGradGuard no_grad;
  const Matrix q = effective_cost_diagonal(params.q_raw).value();
  const Matrix r = effective_cost_diagonal(params.r_raw).value();
  auto out = open_csv(path);
  out << "kind,index,value\n";
  for (Index i = 0; i < q.rows(); ++i) out << "q," << i << "," << g17(q(i, 0)) << "\n";
  for (Index i = 0; i < r.rows(); ++i) out << "r," << i << "," << g17(r(i, 0)) << "\n";
  check_written(out, path);
}

CostDiagonals read_learned_q(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  std::string line;
  std::getline(in, line);
  std::vector<double> q, r;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string kind, index, value;
    std::getline(ls, kind, ',');
    std::getline(ls, index, ',');
    std::getline(ls, value);
    (kind == "q" ? q : r).push_back(std::stod(value));
  }
  CostDiagonals out;
  out.q = Eigen::Map<Vector>(q.data(), static_cast<Index>(q.size()));
  out.r = Eigen::Map<Vector>(r.data(), static_cast<Index>(r.size()));
  return out;
}

void write_report(const AnalysisReport& report, const std::filesystem::path& path) {
  auto out = open_csv(path);
  out << "latent_dim = " << report.latent_dim << "\n";
  out << "controllability_rank = " << report.controllability_rank << "\n";
  out << "spectral_radius = " << g17(report.spectral_radius) << "\n";
  out << "closed_loop_spectral_radius = " << g17(report.closed_loop_spectral_radius) << "\n";
  out << "mean_model_error = " << g17(report.mean_model_error) << "\n";
  out << "total_eval_cost = " << g17(report.total_eval_cost) << "\n";
  out << "q_diagonal =";
  for (double q : report.q_diagonal) out << " " << g17(q);
  out << "\npoles =";
  for (const auto& p : report.poles) out << " " << g17(p.real()) << ":" << g17(p.imag());
  out << "\n";
  check_written(out, path);
}

AnalysisReport read_report(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  AnalysisReport r;
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    std::string key = line.substr(0, eq);
    while (!key.empty() && key.back() == ' ') key.pop_back();
    std::istringstream vs(line.substr(eq + 1));
    if (key == "latent_dim") vs >> r.latent_dim;
    else if (key == "controllability_rank") vs >> r.controllability_rank;
    else if (key == "spectral_radius") vs >> r.spectral_radius;
    else if (key == "closed_loop_spectral_radius") vs >> r.closed_loop_spectral_radius;
    else if (key == "mean_model_error") vs >> r.mean_model_error;
    else if (key == "total_eval_cost") vs >> r.total_eval_cost;
    else if (key == "q_diagonal") {
      double q;
      while (vs >> q) r.q_diagonal.push_back(q);
    } else if (key == "poles") {
      std::string tok;
      while (vs >> tok) {
        const auto colon = tok.find(':');
        if (colon == std::string::npos) throw IoError("malformed pole '" + tok + "' in " + path.string());
        r.poles.emplace_back(std::stod(tok.substr(0, colon)), std::stod(tok.substr(colon + 1)));
      }
    }
  }
  return r;
}

AnalysisReport analyze_agent(Agent& agent, const Config& cfg, const std::filesystem::path& out_dir,
                             long latent_episodes) {
  std::filesystem::create_directories(out_dir);
  auto env = make_env(cfg.env);
  LqrSolution converged;
  {
    NoGradGuard no_grad;
    converged = solve_dare(agent.koopman, effective_cost_diagonal(agent.lqr.q_raw),
                           effective_cost_diagonal(agent.lqr.r_raw), static_cast<int>(cfg.dare_iters_eval));
  }
  const StabilityReport stab = stability_report(agent.koopman, converged);
  write_stability_csv(stab, out_dir / "poles.csv");

  const PolicySnapshot snap = agent.snapshot();
  const Policy policy = deterministic_policy(agent, snap);
  const ModelError err =
      eval_model_error(agent.koopman, agent.encoder, rollout(*env, policy, eval_reset_seed(cfg.seed, 0)));
  write_model_error_csv(err, out_dir / "model_error.csv");
  export_learned_q(agent.lqr, out_dir / "learned_q.csv");
  export_latent_trajectories(agent.koopman, agent.encoder, *env, policy, latent_episodes, cfg.seed,
                             out_dir / "latents.csv");

  AnalysisReport report;
  report.poles = stab.open_poles;
  report.spectral_radius = stab.open_radius;
  report.closed_loop_spectral_radius = stab.closed_radius;
  report.controllability_rank = controllability_rank(agent.koopman);
  report.latent_dim = agent.koopman.latent_dim();
  report.mean_model_error = err.mean;
  {
    NoGradGuard no_grad;
    const Matrix q = effective_cost_diagonal(agent.lqr.q_raw).value();
    report.q_diagonal.assign(q.data(), q.data() + q.size());
  }
  report.total_eval_cost = -evaluate(*env, policy, cfg.eval_episodes, cfg.seed).mean_return();
  write_report(report, out_dir / "report.txt");
  return report;
}

}  // namespace koopctl
