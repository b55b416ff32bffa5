#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "koopctl/trainer.hpp"
#include "test_util.hpp"

using namespace koopctl;
using namespace koopctl::testing;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write_file(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << text;
}

struct Invocation {
  int code = -1;
  std::string output;
};

Invocation run_cli(const std::string& args, const std::filesystem::path& log) {
  const std::string cmd = std::string(KOOPCTL_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(log)};
}

const char* kTinyConfig =
    "# tiny run\n"
    "latent_dim = 4\n"
    "hidden_dim = 8\n"
    "batch_size = 16\n"
    "warmup_steps = 100\n"
    "eval_episodes = 1\n"
    "checkpoint_every = 0\n";

}  // namespace

TEST_CASE("config parsing") {
  Config cfg = parse_config("env = cartpole\n  seed=7  # trailing\n\n# comment\neta = 0.25\nlog_wall_time = true\n");
  CHECK(cfg.env == "cartpole");
  CHECK(cfg.seed == 7);
  CHECK(cfg.eta == 0.25);
  CHECK(cfg.log_wall_time);
  CHECK(cfg.latent_dim == 50);
  CHECK_NOTHROW(cfg.validate());

  CHECK_THROWS_AS(parse_config("no_such_key = 1\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("latent_dim = four\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("just words\n"), ConfigError);
  try {
    parse_config("bogus = 3\n");
  } catch (const ConfigError& e) {
    CHECK(e.field() == "bogus");
  }
}

TEST_CASE("config validation names the field") {
  auto field_of = [](const std::string& text) {
    try {
      parse_config(text).validate();
    } catch (const ConfigError& e) {
      return e.field();
    }
    return std::string();
  };
  CHECK(field_of("gamma = 1.0\n") == "gamma");
  CHECK(field_of("batch_size = 1\n") == "batch_size");
  CHECK(field_of("env = cheetah\n") == "env");
  CHECK(field_of("dare_iters = 0\n") == "dare_iters");
  CHECK(field_of("tau_ema = 1.5\n") == "tau_ema");
  CHECK(field_of("zref_mode = sideways\n") == "zref_mode");
  CHECK(field_of("seed = 3\n").empty());
}

TEST_CASE("config text round trip covers every key") {
  Config cfg = parse_config("env = cartpole\nseed = 11\neta = 0.123456789012345\nbaseline_q_diag = 1,2,3\n");
  const Config back = parse_config(cfg.to_text());
  CHECK(back.to_text() == cfg.to_text());
  const std::string text = cfg.to_text();
  for (const auto& key : config_keys()) CHECK(text.find(key + " = ") != std::string::npos);
}

TEST_CASE("config override precedence: flag over file over default") {
  Config defaults;
  Config from_file = parse_config("seed = 5\nlatent_dim = 6\n");
  CHECK(from_file.seed == 5);
  CHECK(from_file.latent_dim == 6);
  CHECK(from_file.total_steps == defaults.total_steps);
  apply_config_value(from_file, "seed", "9");
  CHECK(from_file.seed == 9);
  CHECK(from_file.latent_dim == 6);
}

TEST_CASE("checkpoint save, load, save is byte-identical") {
  Config cfg;
  cfg.latent_dim = 4;
  cfg.hidden_dim = 8;
  cfg.batch_size = 16;
  cfg.warmup_steps = 50;
  cfg.checkpoint_every = 0;
  cfg.eval_episodes = 0;
  cfg.out = scratch_dir("ckpt_run").string();
  Trainer t(cfg);
  t.advance(120);
  const auto dir = scratch_dir("ckpt");
  t.save_checkpoint(dir / "a");
  Checkpoint ck = Checkpoint::load(dir / "a");
  ck.save(dir / "b");
  CHECK(slurp(dir / "a.bin") == slurp(dir / "b.bin"));
  std::string ma = slurp(dir / "a.manifest");
  std::string mb = slurp(dir / "b.manifest");
  const auto blob_a = ma.find("a.bin");
  REQUIRE(blob_a != std::string::npos);
  ma.replace(blob_a, 5, "b.bin");
  CHECK(ma == mb);

  Checkpoint again = Checkpoint::load(dir / "b.manifest");
  for (const auto& [name, m] : ck.tensors) CHECK(again.tensor(name) == m);
  CHECK(again.scalar("trainer.step") == 120);
  CHECK(checkpoint_stem(dir / "b.bin") == dir / "b");
}

TEST_CASE("checkpoint corruption is detected") {
  const auto dir = scratch_dir("ckpt_bad");
  Checkpoint ck;
  ck.add("x", Matrix::Ones(3, 2));
  ck.add_scalar("n", 4);
  ck.save(dir / "c");

  std::string manifest = slurp(dir / "c.manifest");
  write_file(dir / "v.manifest", "koopctl-checkpoint 99" + manifest.substr(manifest.find('\n')));
  std::filesystem::copy_file(dir / "c.bin", dir / "v.bin");
  CHECK_THROWS_AS(Checkpoint::load(dir / "v"), CheckpointError);

  const std::string blob = slurp(dir / "c.bin");
  write_file(dir / "c.bin", blob.substr(0, blob.size() - 8));
  CHECK_THROWS_AS(Checkpoint::load(dir / "c"), CheckpointError);
  CHECK_THROWS_AS(Checkpoint::load(dir / "missing"), CheckpointError);
  CHECK_THROWS_AS(ck.tensor("y"), CheckpointError);
}

TEST_CASE("command line exit codes and outputs") {
  const auto dir = scratch_dir("cli");
  const auto log = dir / "log.txt";
  write_file(dir / "tiny.cfg", kTinyConfig);
  const std::string base = "--config " + (dir / "tiny.cfg").string();

  SUBCASE("zero steps succeeds with empty metrics") {
    const Invocation r = run_cli("train " + base + " --steps 0 --out " + (dir / "zero").string(), log);
    CHECK(r.code == 0);
    CHECK(slurp(dir / "zero" / "metrics.csv") == std::string(kMetricsHeader) + "\n");
  }
  SUBCASE("configuration problems exit with 2") {
    CHECK(run_cli("train --config " + (dir / "absent.cfg").string(), log).code == 2);
    write_file(dir / "bad.cfg", "gamma = 2\n");
    const Invocation r = run_cli("train --config " + (dir / "bad.cfg").string(), log);
    CHECK(r.code == 2);
    CHECK(r.output.find("gamma") != std::string::npos);
    CHECK(run_cli("train --no-such-flag", log).code == 2);
  }
  SUBCASE("corrupt checkpoints exit with 4") {
    write_file(dir / "junk.manifest", "not a checkpoint\n");
    CHECK(run_cli("eval " + (dir / "junk").string(), log).code == 4);
    CHECK(run_cli("analyze " + (dir / "junk").string(), log).code == 4);
    CHECK(run_cli("export-latents " + (dir / "junk").string(), log).code == 4);
  }
  SUBCASE("divergence exits with 3 and names the crash checkpoint") {
    write_file(dir / "wild.cfg", std::string(kTinyConfig) + "lr_critic = 1e300\n");
    const Invocation r =
        run_cli("train --config " + (dir / "wild.cfg").string() + " --steps 400 --out " + (dir / "wild").string(), log);
    CHECK(r.code == 3);
    CHECK(r.output.find("crash checkpoint") != std::string::npos);
    CHECK(std::filesystem::exists(dir / "wild" / "checkpoints" / "crash.manifest"));
  }
  SUBCASE("train, eval, analyze and export a short run") {
    const auto out = dir / "short";
    const Invocation r = run_cli("train " + base + " --steps 1000 --seed 3 --out " + out.string(), log);
    REQUIRE(r.code == 0);
    const auto ckpt = out / "checkpoints" / "final";
    CHECK(parse_config(slurp(out / "config.txt")).seed == 3);
    CHECK(parse_config(slurp(out / "config.txt")).latent_dim == 4);

    const Invocation e1 = run_cli("eval " + ckpt.string() + " --episodes 1 --out " + (dir / "e1.csv").string(), log);
    CHECK(e1.code == 0);
    const Invocation e2 = run_cli("eval " + ckpt.string() + " --episodes 1 --out " + (dir / "e2.csv").string(), log);
    CHECK(slurp(dir / "e1.csv") == slurp(dir / "e2.csv"));
    // untrained on pendulum: the pole hangs
    std::istringstream rows(slurp(dir / "e1.csv"));
    std::string header, row;
    std::getline(rows, header);
    std::getline(rows, row);
    CHECK(std::stod(row.substr(row.find(',') + 1)) < 50.0);

    CHECK(run_cli("analyze " + ckpt.string() + " --out " + (dir / "an").string(), log).code == 0);
    const std::string report = slurp(dir / "an" / "report.txt");
    for (const char* key : {"poles", "spectral_radius", "closed_loop_spectral_radius", "controllability_rank",
                            "latent_dim", "mean_model_error", "q_diagonal", "total_eval_cost"}) {
      CHECK(report.find(std::string(key) + " = ") != std::string::npos);
    }
    CHECK(run_cli("export-latents " + ckpt.string() + " --out " + (dir / "lat.csv").string(), log).code == 0);
    CHECK(std::filesystem::exists(dir / "lat.csv"));
  }
  SUBCASE("baseline run writes its summary") {
    write_file(dir / "base.cfg", std::string(kTinyConfig) + "baseline_data_steps = 300\nbaseline_train_steps = 50\n");
    const auto out = dir / "base";
    const Invocation r =
        run_cli("train --config " + (dir / "base.cfg").string() + " --baseline --perturb-scale 0.001 --out " +
                    out.string(),
                log);
    CHECK(r.code == 0);
    CHECK(std::filesystem::exists(out / "baseline_eval.csv"));
    CHECK(slurp(out / "baseline.txt").find("perturb_scale = 0.001") != std::string::npos);
  }
}

TEST_CASE("identical config and seed give identical metrics through the CLI") {
  const auto dir = scratch_dir("cli_repeat");
  const auto log = dir / "log.txt";
  write_file(dir / "tiny.cfg", kTinyConfig);
  const std::string args = "train --config " + (dir / "tiny.cfg").string() + " --steps 1100 --seed 4 --out ";
  REQUIRE(run_cli(args + (dir / "a").string(), log).code == 0);
  REQUIRE(run_cli(args + (dir / "b").string(), log).code == 0);
  const std::string a = slurp(dir / "a" / "metrics.csv");
  CHECK(a == slurp(dir / "b" / "metrics.csv"));
  CHECK(a.size() > std::string(kMetricsHeader).size() + 1);
}
