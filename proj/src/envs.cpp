#include "koopctl/envs.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "koopctl/random.hpp"

namespace koopctl {

namespace {

constexpr double kPi = std::numbers::pi;

void require_finite(std::string_view env, const Vector& state, const Vector& control) {
  if (!state.allFinite() || !control.allFinite()) {
    throw SimulationError(std::string(env) + ": non-finite state or control");
  }
}

double clip_unit(double u) { return std::clamp(u, -1.0, 1.0); }

}  // namespace

double wrap_angle(double theta) {
  if (theta > kPi || theta <= -kPi) {
    theta -= 2.0 * kPi * std::floor((theta + kPi) / (2.0 * kPi));
    if (theta <= -kPi) theta += 2.0 * kPi;
    if (theta > kPi) theta -= 2.0 * kPi;
  }
  return theta;
}

Vector Pendulum::reset(std::uint64_t seed) const {
  Rng rng(derive_seed(seed, "reset"));
  Vector s(2);
  s(0) = wrap_angle(kPi + uniform(rng, -0.05, 0.05));
  s(1) = uniform(rng, -0.05, 0.05);
  return s;
}

StepResult Pendulum::step(const Vector& state, const Vector& control) const {
  require_finite(name(), state, control);
  if (state.size() != 2 || control.size() != 1) {
    throw DimensionError("pendulum: expected state [2] and control [1]");
  }
  const double u = clip_unit(control(0));
  const double theta = state(0);
  const double omega = state(1);
  const double ml2 = p_.mass * p_.length * p_.length;
  const double accel = (p_.gravity / p_.length) * std::sin(theta) +
                       (p_.torque_gain * u - p_.damping * omega) / ml2;
  StepResult r;
  r.next_state.resize(2);
  r.next_state(1) = omega + kDt * accel;
  r.next_state(0) = wrap_angle(theta + kDt * r.next_state(1));
  r.reward = 0.5 * (1.0 + std::cos(r.next_state(0)));
  r.done = false;
  return r;
}

Vector Pendulum::observe(const Vector& state) const {
  Vector o(3);
  o << std::cos(state(0)), std::sin(state(0)), state(1);
  return o;
}

double Pendulum::energy(const Vector& state) const {
  const double ml2 = p_.mass * p_.length * p_.length;
  return 0.5 * ml2 * state(1) * state(1) + p_.mass * p_.gravity * p_.length * (1.0 + std::cos(state(0)));
}

Vector CartPole::reset(std::uint64_t seed) const {
  Rng rng(derive_seed(seed, "reset"));
  Vector s(4);
  s(0) = 0.0;
  s(1) = uniform(rng, -0.05, 0.05);
  s(2) = wrap_angle(kPi + uniform(rng, -0.05, 0.05));
  s(3) = uniform(rng, -0.05, 0.05);
  return s;
}

StepResult CartPole::step(const Vector& state, const Vector& control) const {
  require_finite(name(), state, control);
  if (state.size() != 4 || control.size() != 1) {
    throw DimensionError("cartpole: expected state [4] and control [1]");
  }
  const double force = p_.force_gain * clip_unit(control(0));
  const double x = state(0), x_dot = state(1), theta = state(2), theta_dot = state(3);
  const double total = p_.cart_mass + p_.pole_mass;
  const double pml = p_.pole_mass * p_.half_length;
  const double s = std::sin(theta), c = std::cos(theta);

  const double temp = (force + pml * theta_dot * theta_dot * s) / total;
  const double theta_acc =
      (p_.gravity * s - c * temp) / (p_.half_length * (4.0 / 3.0 - p_.pole_mass * c * c / total));
  const double x_acc = temp - pml * theta_acc * c / total;

  StepResult r;
  r.next_state.resize(4);
  r.next_state(1) = x_dot + kDt * x_acc;
  r.next_state(0) = x + kDt * r.next_state(1);
  r.next_state(3) = theta_dot + kDt * theta_acc;
  r.next_state(2) = wrap_angle(theta + kDt * r.next_state(3));

  const double upright = 0.5 * (1.0 + std::cos(r.next_state(2)));
  const double centered = std::max(0.0, 1.0 - std::abs(r.next_state(0)) / p_.x_limit);
  r.reward = upright * centered;
  r.done = std::abs(r.next_state(0)) > p_.x_limit;
  return r;
}

Vector CartPole::observe(const Vector& state) const {
  Vector o(5);
  o << state(0), std::cos(state(2)), std::sin(state(2)), state(1), state(3);
  return o;
}

LinearSystemEnv::LinearSystemEnv(Matrix a, Matrix b, Vector q_diag, Vector r_diag, double init_scale)
    : a_(std::move(a)), b_(std::move(b)), q_(std::move(q_diag)), r_(std::move(r_diag)), init_scale_(init_scale) {
  if (a_.rows() != a_.cols() || b_.rows() != a_.rows() || q_.size() != a_.rows() || r_.size() != b_.cols()) {
    throw DimensionError("linear env: inconsistent A, B, Q, R shapes");
  }
}

Vector LinearSystemEnv::reset(std::uint64_t seed) const {
  Rng rng(derive_seed(seed, "reset"));
  Vector s(a_.rows());
  for (Index i = 0; i < s.size(); ++i) s(i) = uniform(rng, -init_scale_, init_scale_);
  return s;
}

double LinearSystemEnv::cost(const Vector& state, const Vector& control) const {
  return state.dot(q_.cwiseProduct(state)) + control.dot(r_.cwiseProduct(control));
}

StepResult LinearSystemEnv::step(const Vector& state, const Vector& control) const {
  require_finite(name(), state, control);
  StepResult r;
  r.next_state = a_ * state + b_ * control;
  r.reward = std::exp(-cost(state, control));
  r.done = false;
  return r;
}

std::unique_ptr<Environment> make_env(std::string_view name) {
  if (name == "pendulum") return std::make_unique<Pendulum>();
  if (name == "cartpole") return std::make_unique<CartPole>();
  throw UsageError("unknown environment '" + std::string(name) + "' (expected pendulum or cartpole)");
}

}  // namespace koopctl
