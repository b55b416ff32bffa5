#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace koopctl {

/// Every knob of a run. Loaded from flat `key = value` text; unknown keys and
/// malformed values raise ConfigError naming the field.
struct Config {
  std::string env = "pendulum";
  std::uint64_t seed = 0;
  long latent_dim = 50;
  long control_dim = 0;  // 0: take from the environment
  long hidden_dim = 64;
  long total_steps = 100000;
  long warmup_steps = 1000;
  long dare_iters = 5;
  long dare_iters_eval = 200;
  double eta = 0.1;
  double tau_ema = 0.95;
  double critic_tau = 0.99;
  double lr_critic = 1e-3;
  double lr_alpha = 1e-3;
  double lr_actor = 3e-4;
  double lr_encoder = 3e-4;
  double lr_koopman = 3e-4;
  long batch_size = 128;
  double gamma = 0.99;
  long buffer_capacity = 1000000;
  std::string zref_mode = "goal";  // goal | zero
  double init_alpha = 0.1;
  double init_log_std = 0.0;
  long checkpoint_every = 10000;
  long eval_episodes = 10;
  bool log_wall_time = false;
  std::string out;  // empty: $KOOPCTL_OUT or ./runs, then <env>-seed<seed>

  // Two-stage baseline.
  bool baseline = false;
  std::string baseline_q_diag = "1";
  double baseline_q_fill = 1.0;
  std::string baseline_r_diag = "1";
  double perturb_scale = 0.0;
  long baseline_data_steps = 20000;
  long baseline_train_steps = 20000;
  bool baseline_use_cst = true;
  double ridge = 1e-6;

  /// Resolved output directory.
  std::filesystem::path output_dir() const;

  /// Throws ConfigError on the first out-of-range field.
  void validate() const;

  /// Canonical `key = value` text, fields in declaration order, 17-digit floats.
  std::string to_text() const;

  std::vector<double> baseline_q_values(long latent_dim) const;
  std::vector<double> baseline_r_values(long control_dim) const;
};

/// Sets one field from text. Throws ConfigError for unknown keys or bad values.
void apply_config_value(Config& cfg, const std::string& key, const std::string& value);

/// Parses `key = value` lines with `#` comments on top of `base`.
Config parse_config(const std::string& text, Config base = {});
Config load_config(const std::filesystem::path& path, Config base = {});

std::vector<std::string> config_keys();

}  // namespace koopctl
