#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <string_view>

#include "koopctl/tensor.hpp"

namespace koopctl {

/// Wraps an angle into (-pi, pi].
double wrap_angle(double theta);

struct StepResult {
  Vector next_state;
  double reward = 0.0;
  bool done = false;  // terminal (out of bounds); the episode step limit is the caller's concern
};

/// Deterministic simulator with the episodic interaction protocol used by training.
///
/// `step` is a pure function of (state, control): controls are clipped to
/// [-1, 1] per dimension and scaled by the actuator gain inside. The encoder
/// sees `observe(state)`, which replaces each pole angle with (cos, sin).
class Environment {
 public:
  static constexpr int kEpisodeSteps = 1000;
  static constexpr double kDt = 0.02;

  virtual ~Environment() = default;

  virtual std::string_view name() const = 0;
  virtual Index state_dim() const = 0;
  virtual Index observation_dim() const = 0;
  virtual Index control_dim() const { return 1; }

  virtual Vector reset(std::uint64_t seed) const = 0;
  virtual StepResult step(const Vector& state, const Vector& control) const = 0;
  virtual Vector observe(const Vector& state) const = 0;
  /// State the task tries to reach (pole upright, everything else at rest).
  virtual Vector goal_state() const = 0;
  /// Pole angle, 0 = upright.
  virtual double pole_angle(const Vector& state) const = 0;
};

struct PendulumParams {
  double mass = 1.0;
  double length = 1.0;
  double gravity = 9.81;
  double torque_gain = 2.0;
  double damping = 0.05;
};

/// State (theta, theta_dot), theta = 0 upright.
class Pendulum final : public Environment {
 public:
  explicit Pendulum(PendulumParams p = {}) : p_(p) {}

  std::string_view name() const override { return "pendulum"; }
  Index state_dim() const override { return 2; }
  Index observation_dim() const override { return 3; }
  Vector reset(std::uint64_t seed) const override;
  StepResult step(const Vector& state, const Vector& control) const override;
  Vector observe(const Vector& state) const override;
  Vector goal_state() const override { return Vector::Zero(2); }
  double pole_angle(const Vector& state) const override { return state(0); }

  /// Total mechanical energy, zero at the hanging rest position.
  double energy(const Vector& state) const;
  const PendulumParams& params() const { return p_; }

 private:
  PendulumParams p_;
};

struct CartPoleParams {
  double cart_mass = 1.0;
  double pole_mass = 0.1;
  double half_length = 0.5;
  double gravity = 9.81;
  double force_gain = 10.0;
  double x_limit = 2.4;
};

/// State (x, x_dot, theta, theta_dot), theta = 0 upright.
class CartPole final : public Environment {
 public:
  explicit CartPole(CartPoleParams p = {}) : p_(p) {}

  std::string_view name() const override { return "cartpole"; }
  Index state_dim() const override { return 4; }
  Index observation_dim() const override { return 5; }
  Vector reset(std::uint64_t seed) const override;
  StepResult step(const Vector& state, const Vector& control) const override;
  Vector observe(const Vector& state) const override;
  Vector goal_state() const override { return Vector::Zero(4); }
  double pole_angle(const Vector& state) const override { return state(2); }

  const CartPoleParams& params() const { return p_; }

 private:
  CartPoleParams p_;
};

/// x' = A x + B u with reward exp(-(x'Qx' + u'Ru)), no clipping. Observation = state.
/// Used to check the two-stage pipeline against analytic LQR.
class LinearSystemEnv final : public Environment {
 public:
  LinearSystemEnv(Matrix a, Matrix b, Vector q_diag, Vector r_diag, double init_scale = 1.0);

  std::string_view name() const override { return "linear"; }
  Index state_dim() const override { return a_.rows(); }
  Index observation_dim() const override { return a_.rows(); }
  Index control_dim() const override { return b_.cols(); }
  Vector reset(std::uint64_t seed) const override;
  StepResult step(const Vector& state, const Vector& control) const override;
  Vector observe(const Vector& state) const override { return state; }
  Vector goal_state() const override { return Vector::Zero(a_.rows()); }
  double pole_angle(const Vector&) const override { return 0.0; }

  /// Stage cost x'Qx + u'Ru.
  double cost(const Vector& state, const Vector& control) const;
  const Matrix& a() const { return a_; }
  const Matrix& b() const { return b_; }
  const Vector& q_diag() const { return q_; }
  const Vector& r_diag() const { return r_; }

 private:
  Matrix a_, b_;
  Vector q_, r_;
  double init_scale_;
};

/// "pendulum" | "cartpole"
std::unique_ptr<Environment> make_env(std::string_view name);

}  // namespace koopctl
