#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>

#include "koopctl/analysis.hpp"
#include "koopctl/trainer.hpp"

using namespace koopctl;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitConfig = 2;
constexpr int kExitDiverged = 3;
constexpr int kExitCheckpoint = 4;

std::filesystem::path g_crash_checkpoint;

std::filesystem::path crash_checkpoint(const Config& cfg) {
  return cfg.output_dir() / "checkpoints" / "crash.manifest";
}

int diverged(const char* what, const std::exception& e) {
  std::cerr << what << ": " << e.what() << "\n";
  if (!g_crash_checkpoint.empty() && std::filesystem::exists(g_crash_checkpoint)) {
    std::cerr << "crash checkpoint: " << g_crash_checkpoint.string() << "\n";
  }
  return kExitDiverged;
}

struct Overrides {
  std::string config;
  std::string seed, out, steps, env, perturb_scale, latent_dim, dare_iters;
  bool baseline = false;
  std::string resume;
};

void add_common(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config, "Config file (key = value)");
  cmd->add_option("--seed", o.seed, "Run seed");
  cmd->add_option("--out", o.out, "Output directory");
  cmd->add_option("--steps", o.steps, "Total environment steps");
  cmd->add_option("--env", o.env, "pendulum | cartpole");
  cmd->add_flag("--baseline", o.baseline, "Run the two-stage baseline");
  cmd->add_option("--perturb-scale", o.perturb_scale, "Frobenius norm of the [A B] perturbation");
  cmd->add_option("--latent-dim", o.latent_dim, "Latent dimension d");
  cmd->add_option("--dare-iters", o.dare_iters, "Riccati iterations during training");
}

Config resolve_config(const Overrides& o) {
  Config cfg;
  if (!o.config.empty()) {
    if (!std::filesystem::exists(o.config)) throw ConfigError("config", "config file not found: " + o.config);
    cfg = load_config(o.config);
  }
  auto set = [&](const char* key, const std::string& v) {
    if (!v.empty()) apply_config_value(cfg, key, v);
  };
  set("seed", o.seed);
  set("out", o.out);
  set("total_steps", o.steps);
  set("env", o.env);
  set("perturb_scale", o.perturb_scale);
  set("latent_dim", o.latent_dim);
  set("dare_iters", o.dare_iters);
  if (o.baseline) cfg.baseline = true;
  cfg.validate();
  return cfg;
}

std::string g17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_eval_csv(const EvalSummary& ev, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << "episode,return,steps,balanced,final_max_abs_angle\n";
  for (std::size_t i = 0; i < ev.episodes.size(); ++i) {
    const auto& e = ev.episodes[i];
    out << i << "," << g17(e.ret) << "," << e.steps << "," << (e.balanced ? 1 : 0) << ","
        << g17(e.final_max_abs_angle) << "\n";
  }
}

void print_eval(const EvalSummary& ev) {
  std::printf("return %.4f +- %.4f over %zu episodes (%ld balanced)\n", ev.mean_return(), ev.std_return(),
              ev.episodes.size(), ev.balanced_count());
}

int cmd_train(const Overrides& o) {
  if (!o.resume.empty()) {
    std::optional<long> steps;
    if (!o.steps.empty()) {
      Config probe;
      apply_config_value(probe, "total_steps", o.steps);
      steps = probe.total_steps;
    }
    Trainer t = Trainer::resume(o.resume, steps);
    g_crash_checkpoint = crash_checkpoint(t.config());
    TrainingRun run = t.run();
    std::printf("final checkpoint %s\n", run.final_checkpoint.c_str());
    print_eval(run.final_eval);
    return kExitOk;
  }
  Config cfg = resolve_config(o);
  if (cfg.baseline) {
    BaselineRun run = train_two_stage_baseline(cfg);
    const auto dir = cfg.output_dir();
    std::filesystem::create_directories(dir);
    write_eval_csv(run.eval, dir / "baseline_eval.csv");
    std::ofstream rep(dir / "baseline.txt", std::ios::trunc);
    rep << "model_error = " << g17(run.model.model_error) << "\n";
    rep << "mean_return = " << g17(run.eval.mean_return()) << "\n";
    rep << "std_return = " << g17(run.eval.std_return()) << "\n";
    rep << "total_cost = " << g17(run.total_cost) << "\n";
    rep << "perturb_scale = " << g17(cfg.perturb_scale) << "\n";
    std::printf("baseline model error %.6g\n", run.model.model_error);
    print_eval(run.eval);
    return kExitOk;
  }
  g_crash_checkpoint = crash_checkpoint(cfg);
  TrainingRun run = train(cfg);
  std::printf("metrics %s\nfinal checkpoint %s\n", (run.out_dir / "metrics.csv").c_str(),
              run.final_checkpoint.c_str());
  print_eval(run.final_eval);
  return kExitOk;
}

Checkpoint load_trainer_checkpoint(const std::string& path) {
  Checkpoint ck = Checkpoint::load(path);
  if (ck.kind != "trainer") throw CheckpointError("checkpoint kind '" + ck.kind + "' holds no agent");
  return ck;
}

int cmd_eval(const std::string& ckpt, long episodes, const std::string& seed, const std::string& out) {
  Checkpoint ck = load_trainer_checkpoint(ckpt);
  Config cfg;
  auto agent = load_agent(ck, &cfg);
  if (!seed.empty()) apply_config_value(cfg, "seed", seed);
  auto env = make_env(cfg.env);
  const PolicySnapshot snap = agent->snapshot();
  EvalSummary ev = evaluate(*env, deterministic_policy(*agent, snap), episodes, cfg.seed);
  std::filesystem::path csv = out;
  if (csv.empty()) {
    csv = checkpoint_stem(ckpt);
    csv += ".eval.csv";
  }
  write_eval_csv(ev, csv);
  print_eval(ev);
  if (ck.has_tensor("log.eval_return")) std::printf("logged at save %.4f\n", ck.tensor("log.eval_return")(0, 0));
  return kExitOk;
}

int cmd_analyze(const std::string& ckpt, const std::string& out, long episodes) {
  Checkpoint ck = load_trainer_checkpoint(ckpt);
  Config cfg;
  auto agent = load_agent(ck, &cfg);
  const std::filesystem::path dir = out.empty() ? cfg.output_dir() / "analysis" : std::filesystem::path(out);
  AnalysisReport r = analyze_agent(*agent, cfg, dir, episodes);
  std::printf("report %s\n", (dir / "report.txt").c_str());
  std::printf("rank %ld / %ld, spectral radius %.6g (closed loop %.6g), model error %.6g, eval cost %.4f\n",
              static_cast<long>(r.controllability_rank), static_cast<long>(r.latent_dim), r.spectral_radius,
              r.closed_loop_spectral_radius, r.mean_model_error, r.total_eval_cost);
  return kExitOk;
}

int cmd_export_latents(const std::string& ckpt, const std::string& out, long episodes) {
  Checkpoint ck = load_trainer_checkpoint(ckpt);
  Config cfg;
  auto agent = load_agent(ck, &cfg);
  auto env = make_env(cfg.env);
  const std::filesystem::path path = out.empty() ? cfg.output_dir() / "latents.csv" : std::filesystem::path(out);
  const PolicySnapshot snap = agent->snapshot();
  export_latent_trajectories(agent->koopman, agent->encoder, *env, deterministic_policy(*agent, snap), episodes,
                             cfg.seed, path);
  std::printf("latents %s\n", path.c_str());
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Task-oriented Koopman control toolkit"};
  app.require_subcommand(1);

  Overrides train_opts;
  auto* train_cmd = app.add_subcommand("train", "Train an agent (or the two-stage baseline)");
  add_common(train_cmd, train_opts);
  train_cmd->add_option("--resume", train_opts.resume, "Resume from a checkpoint");

  std::string ckpt, out, seed;
  long episodes = 10;
  auto* eval_cmd = app.add_subcommand("eval", "Deterministic evaluation of a checkpoint");
  eval_cmd->add_option("checkpoint", ckpt, "Checkpoint stem or manifest")->required();
  eval_cmd->add_option("--episodes", episodes, "Episodes")->check(CLI::NonNegativeNumber);
  eval_cmd->add_option("--seed", seed, "Evaluation seed (default: the run seed)");
  eval_cmd->add_option("--out", out, "Per-episode CSV");

  long latent_episodes = 1;
  auto* analyze_cmd = app.add_subcommand("analyze", "Poles, controllability, model error, learned Q");
  analyze_cmd->add_option("checkpoint", ckpt, "Checkpoint stem or manifest")->required();
  analyze_cmd->add_option("--out", out, "Output directory");
  analyze_cmd->add_option("--episodes", latent_episodes, "Latent-trajectory episodes")->check(CLI::NonNegativeNumber);

  auto* export_cmd = app.add_subcommand("export-latents", "True and predicted latent trajectories");
  export_cmd->add_option("checkpoint", ckpt, "Checkpoint stem or manifest")->required();
  export_cmd->add_option("--out", out, "CSV path");
  export_cmd->add_option("--episodes", latent_episodes, "Episodes")->check(CLI::NonNegativeNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*train_cmd) return cmd_train(train_opts);
    if (*eval_cmd) return cmd_eval(ckpt, episodes, seed, out);
    if (*analyze_cmd) return cmd_analyze(ckpt, out, latent_episodes);
    if (*export_cmd) return cmd_export_latents(ckpt, out, latent_episodes);
  } catch (const ConfigError& e) {
    std::cerr << "invalid config: " << e.what() << "\n";
    return kExitConfig;
  } catch (const CheckpointError& e) {
    std::cerr << "checkpoint error: " << e.what() << "\n";
    return kExitCheckpoint;
  } catch (const TrainingError& e) {
    return diverged("training diverged", e);
  } catch (const NumericError& e) {
    return diverged("numeric failure", e);
  } catch (const SimulationError& e) {
    return diverged("simulation failure", e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitFailure;
}
