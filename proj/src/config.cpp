#include "koopctl/config.hpp"

#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>

#include "koopctl/errors.hpp"

namespace koopctl {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double parse_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto* end = v.data() + v.size();
  auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || ptr != end) throw ConfigError(key, "config field '" + key + "': not a number: '" + v + "'");
  return out;
}

long parse_long(const std::string& key, const std::string& v) {
  long out = 0;
  const auto* end = v.data() + v.size();
  auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || ptr != end) throw ConfigError(key, "config field '" + key + "': not an integer: '" + v + "'");
  return out;
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto* end = v.data() + v.size();
  auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || ptr != end) {
    throw ConfigError(key, "config field '" + key + "': not an unsigned integer: '" + v + "'");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(key, "config field '" + key + "': not a boolean: '" + v + "'");
}

std::vector<double> parse_list(const std::string& key, const std::string& v) {
  std::vector<double> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_double(key, trim(item)));
  if (out.empty()) throw ConfigError(key, "config field '" + key + "': empty list");
  return out;
}

struct Field {
  const char* name;
  std::function<std::string(const Config&)> get;
  std::function<void(Config&, const std::string&)> set;
};

#define KOOP_FIELD_STR(f) \
  Field{#f, [](const Config& c) { return c.f; }, [](Config& c, const std::string& v) { c.f = v; }}
#define KOOP_FIELD_LONG(f)                                                  \
  Field{#f, [](const Config& c) { return std::to_string(c.f); },           \
        [](Config& c, const std::string& v) { c.f = parse_long(#f, v); }}
#define KOOP_FIELD_DOUBLE(f)                                                \
  Field{#f, [](const Config& c) { return fmt_double(c.f); },               \
        [](Config& c, const std::string& v) { c.f = parse_double(#f, v); }}
#define KOOP_FIELD_BOOL(f)                                                  \
  Field{#f, [](const Config& c) { return std::string(c.f ? "true" : "false"); }, \
        [](Config& c, const std::string& v) { c.f = parse_bool(#f, v); }}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      KOOP_FIELD_STR(env),
      Field{"seed", [](const Config& c) { return std::to_string(c.seed); },
            [](Config& c, const std::string& v) { c.seed = parse_u64("seed", v); }},
      KOOP_FIELD_LONG(latent_dim),
      KOOP_FIELD_LONG(control_dim),
      KOOP_FIELD_LONG(hidden_dim),
      KOOP_FIELD_LONG(total_steps),
      KOOP_FIELD_LONG(warmup_steps),
      KOOP_FIELD_LONG(dare_iters),
      KOOP_FIELD_LONG(dare_iters_eval),
      KOOP_FIELD_DOUBLE(eta),
      KOOP_FIELD_DOUBLE(tau_ema),
      KOOP_FIELD_DOUBLE(critic_tau),
      KOOP_FIELD_DOUBLE(lr_critic),
      KOOP_FIELD_DOUBLE(lr_alpha),
      KOOP_FIELD_DOUBLE(lr_actor),
      KOOP_FIELD_DOUBLE(lr_encoder),
      KOOP_FIELD_DOUBLE(lr_koopman),
      KOOP_FIELD_LONG(batch_size),
      KOOP_FIELD_DOUBLE(gamma),
      KOOP_FIELD_LONG(buffer_capacity),
      KOOP_FIELD_STR(zref_mode),
      KOOP_FIELD_DOUBLE(init_alpha),
      KOOP_FIELD_DOUBLE(init_log_std),
      KOOP_FIELD_LONG(checkpoint_every),
      KOOP_FIELD_LONG(eval_episodes),
      KOOP_FIELD_BOOL(log_wall_time),
      KOOP_FIELD_STR(out),
      KOOP_FIELD_BOOL(baseline),
      KOOP_FIELD_STR(baseline_q_diag),
      KOOP_FIELD_DOUBLE(baseline_q_fill),
      KOOP_FIELD_STR(baseline_r_diag),
      KOOP_FIELD_DOUBLE(perturb_scale),
      KOOP_FIELD_LONG(baseline_data_steps),
      KOOP_FIELD_LONG(baseline_train_steps),
      KOOP_FIELD_BOOL(baseline_use_cst),
      KOOP_FIELD_DOUBLE(ridge),
  };
  return table;
}

#undef KOOP_FIELD_STR
#undef KOOP_FIELD_LONG
#undef KOOP_FIELD_DOUBLE
#undef KOOP_FIELD_BOOL

void require(bool ok, const char* field, const std::string& what) {
  if (!ok) throw ConfigError(field, std::string("config field '") + field + "': " + what);
}

}  // namespace

std::filesystem::path Config::output_dir() const {
  if (!out.empty()) return out;
  std::filesystem::path root = "runs";
  if (const char* env_root = std::getenv("KOOPCTL_OUT"); env_root && *env_root) root = env_root;
  return root / (env + "-seed" + std::to_string(seed) + (baseline ? "-baseline" : ""));
}

void Config::validate() const {
  require(env == "pendulum" || env == "cartpole", "env", "expected pendulum or cartpole, got '" + env + "'");
  require(latent_dim >= 1, "latent_dim", "must be >= 1");
  require(control_dim >= 0, "control_dim", "must be >= 0");
  require(control_dim == 0 || control_dim == 1, "control_dim", "both environments have a 1-D control");
  require(hidden_dim >= 1, "hidden_dim", "must be >= 1");
  require(total_steps >= 0, "total_steps", "must be >= 0");
  require(warmup_steps >= 0, "warmup_steps", "must be >= 0");
  require(dare_iters >= 1, "dare_iters", "must be >= 1");
  require(dare_iters_eval >= 1, "dare_iters_eval", "must be >= 1");
  require(eta >= 0.0, "eta", "must be >= 0");
  require(tau_ema >= 0.0 && tau_ema <= 1.0, "tau_ema", "must lie in [0, 1]");
  require(critic_tau >= 0.0 && critic_tau <= 1.0, "critic_tau", "must lie in [0, 1]");
  require(lr_critic >= 0.0, "lr_critic", "must be >= 0");
  require(lr_alpha >= 0.0, "lr_alpha", "must be >= 0");
  require(lr_actor >= 0.0, "lr_actor", "must be >= 0");
  require(lr_encoder >= 0.0, "lr_encoder", "must be >= 0");
  require(lr_koopman >= 0.0, "lr_koopman", "must be >= 0");
  require(batch_size >= 2, "batch_size", "must be >= 2 (contrastive negatives)");
  require(gamma > 0.0 && gamma < 1.0, "gamma", "must lie in (0, 1)");
  require(buffer_capacity >= batch_size, "buffer_capacity", "must be >= batch_size");
  require(zref_mode == "goal" || zref_mode == "zero", "zref_mode", "expected goal or zero");
  require(init_alpha > 0.0, "init_alpha", "must be > 0");
  require(init_log_std >= -10.0 && init_log_std <= 2.0, "init_log_std", "must lie in [-10, 2]");
  require(checkpoint_every >= 0, "checkpoint_every", "must be >= 0");
  require(eval_episodes >= 0, "eval_episodes", "must be >= 0");
  require(perturb_scale >= 0.0, "perturb_scale", "must be >= 0");
  require(baseline_data_steps >= 0, "baseline_data_steps", "must be >= 0");
  require(baseline_train_steps >= 0, "baseline_train_steps", "must be >= 0");
  require(ridge >= 0.0, "ridge", "must be >= 0");
  for (double q : baseline_q_values(latent_dim)) require(q >= 0.0, "baseline_q_diag", "entries must be >= 0");
  for (double r : baseline_r_values(1)) require(r > 0.0, "baseline_r_diag", "entries must be > 0");
}

std::vector<double> Config::baseline_q_values(long d) const {
  std::vector<double> v = parse_list("baseline_q_diag", baseline_q_diag);
  if (static_cast<long>(v.size()) > d) v.resize(static_cast<std::size_t>(d));
  while (static_cast<long>(v.size()) < d) v.push_back(baseline_q_fill);
  return v;
}

std::vector<double> Config::baseline_r_values(long m) const {
  std::vector<double> v = parse_list("baseline_r_diag", baseline_r_diag);
  if (static_cast<long>(v.size()) > m) v.resize(static_cast<std::size_t>(m));
  while (static_cast<long>(v.size()) < m) v.push_back(v.back());
  return v;
}

std::string Config::to_text() const {
  std::string out;
  for (const auto& f : fields()) out += std::string(f.name) + " = " + f.get(*this) + "\n";
  return out;
}

void apply_config_value(Config& cfg, const std::string& key, const std::string& value) {
  for (const auto& f : fields()) {
    if (key == f.name) {
      f.set(cfg, value);
      return;
    }
  }
  throw ConfigError(key, "unknown config key '" + key + "'");
}

Config parse_config(const std::string& text, Config base) {
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(lineno), "config line " + std::to_string(lineno) +
                                                              ": expected 'key = value'");
    }
    apply_config_value(base, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return base;
}

Config load_config(const std::filesystem::path& path, Config base) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config", "cannot open config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), std::move(base));
}

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const auto& f : fields()) out.emplace_back(f.name);
  return out;
}

}  // namespace koopctl
