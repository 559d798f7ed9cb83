#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "sacla/param_store.hpp"
#include "sacla/rng.hpp"

namespace sacla {

// Environment state. Physics runs in double regardless of the learning
// scalar type; learners cast observations on entry.
struct EnvState {
  std::vector<double> observation;
  std::vector<double> goal;
  std::int64_t step_index = 0;
  bool done = false;
  // log-density of the initial state under the reset distribution; the
  // leading term of the trajectory log-probability.
  double init_log_density = 0.0;
};

// Desk-scale cart-pole balance task. Observation (x, xdot, theta, thetadot),
// scalar force action, goal fixed at the upright origin.
struct CartPoleParams {
  double cart_mass = 1.0;
  double pole_mass = 0.1;
  double pole_half_length = 0.5;
  double gravity = 9.8;
  double dt = 0.02;
  double force_limit = 3.0;
  double angle_limit = 0.2;
  double position_limit = 1.0;
  double init_noise = 0.01;
  std::int64_t max_steps = 1000;

  void validate() const {
    if (cart_mass <= 0 || pole_mass <= 0 || pole_half_length <= 0 ||
        gravity <= 0 || dt <= 0 || force_limit <= 0 || angle_limit <= 0 ||
        position_limit <= 0 || init_noise <= 0 || max_steps <= 0)
      throw ConfigError("cart-pole parameters must be positive");
    if (angle_limit >= 1.5707963267948966)
      throw ConfigError("cart-pole angle_limit must be < pi/2");
  }
};

enum class RewardMode { kDense, kSparse };

// Goal-conditioned point-reach task: damped double integrator in 3-D.
// Observation (p, v, g) in R^9, per-axis acceleration action, goal drawn
// uniformly in a box each episode.
struct ReachParams {
  double dt = 0.05;
  double damping = 0.25;
  double action_limit = 1.0;
  double goal_box = 1.0;  // half-width per axis
  double success_radius = 0.05;
  RewardMode reward_mode = RewardMode::kDense;
  std::int64_t max_steps = 200;

  void validate() const {
    if (dt <= 0 || damping <= 0 || action_limit <= 0 || goal_box <= 0 ||
        success_radius <= 0 || max_steps <= 0)
      throw ConfigError("reach parameters must be positive");
    if (success_radius >= goal_box)
      throw ConfigError("reach success_radius must be < goal_box");
  }
};

enum class EnvId { kCartPole, kReach };

inline EnvId env_id_from_string(const std::string& s) {
  if (s == "cartpole") return EnvId::kCartPole;
  if (s == "reach") return EnvId::kReach;
  throw ConfigError("unknown environment id: " + s);
}

inline std::string to_string(EnvId id) {
  return id == EnvId::kCartPole ? "cartpole" : "reach";
}

struct Env {
  EnvId id = EnvId::kCartPole;
  CartPoleParams cartpole;
  ReachParams reach;

  std::size_t obs_dim() const { return id == EnvId::kCartPole ? 4u : 9u; }
  std::size_t goal_dim() const { return id == EnvId::kCartPole ? 4u : 3u; }
  std::size_t action_dim() const { return id == EnvId::kCartPole ? 1u : 3u; }
  double action_scale() const {
    return id == EnvId::kCartPole ? cartpole.force_limit : reach.action_limit;
  }

  // Goal-relative Lyapunov feature vector; the zero vector exactly at the
  // goal with zero velocity.
  std::size_t feature_dim() const { return id == EnvId::kCartPole ? 4u : 6u; }

  template <typename T, typename U>
  std::vector<T> features(const std::vector<U>& obs,
                          const std::vector<U>& goal) const {
    std::vector<T> f;
    if (id == EnvId::kCartPole) {
      f.reserve(4);
      for (std::size_t i = 0; i < 4; ++i)
        f.push_back(static_cast<T>(obs[i] - goal[i]));
    } else {
      f.reserve(6);
      for (std::size_t i = 0; i < 3; ++i)
        f.push_back(static_cast<T>(obs[i] - goal[i]));  // p - g
      for (std::size_t i = 3; i < 6; ++i)
        f.push_back(static_cast<T>(obs[i]));  // v
    }
    return f;
  }

  // Observation whose features relative to `goal` are exactly zero (the
  // goal state with zero velocity). Used for V(g) and as grid base point.
  std::vector<double> goal_state(const std::vector<double>& goal) const {
    if (id == EnvId::kCartPole) return goal;
    std::vector<double> obs(9, 0.0);
    for (std::size_t i = 0; i < 3; ++i) {
      obs[i] = goal[i];
      obs[6 + i] = goal[i];
    }
    return obs;
  }

  void validate() const {
    if (id == EnvId::kCartPole)
      cartpole.validate();
    else
      reach.validate();
  }
};

inline EnvState env_reset(const Env& env, Rng& rng) {
  env.validate();
  EnvState s;
  if (env.id == EnvId::kCartPole) {
    const auto& p = env.cartpole;
    s.observation.resize(4);
    for (auto& x : s.observation) x = rng.uniform(-p.init_noise, p.init_noise);
    s.goal.assign(4, 0.0);
    // uniform over a box of half-width init_noise in each dimension
    s.init_log_density = -4.0 * std::log(2.0 * p.init_noise);
  } else {
    const auto& p = env.reach;
    s.observation.assign(9, 0.0);
    s.goal.resize(3);
    for (auto& g : s.goal) g = rng.uniform(-p.goal_box, p.goal_box);
    for (std::size_t i = 0; i < 3; ++i) s.observation[6 + i] = s.goal[i];
    // deterministic start: point mass, log 1 = 0
    s.init_log_density = 0.0;
  }
  return s;
}

inline EnvState env_reset(const Env& env, std::uint64_t seed) {
  Rng rng(seed);
  return env_reset(env, rng);
}

// Pure reward as a function of state and goal.
inline double reward(const Env& env, const std::vector<double>& obs,
                     const std::vector<double>& goal) {
  if (env.id == EnvId::kCartPole) return 1.0;
  double d2 = 0.0;
  for (std::size_t i = 0; i < 3; ++i) {
    double e = obs[i] - goal[i];
    d2 += e * e;
  }
  double dist = std::sqrt(d2);
  if (env.reach.reward_mode == RewardMode::kDense) return -dist;
  return dist < env.reach.success_radius ? 0.0 : -1.0;
}

struct StepResult {
  EnvState state;
  double reward = 0.0;
  bool done = false;
};

inline StepResult env_step(const Env& env, const EnvState& state,
                           const std::vector<double>& action) {
  if (state.done) throw UsageError("env_step on a finished episode");
  StepResult out;
  out.state = state;
  out.state.step_index = state.step_index + 1;
  if (env.id == EnvId::kCartPole) {
    const auto& p = env.cartpole;
    double u = action.empty() ? 0.0 : action[0];
    u = std::clamp(u, -p.force_limit, p.force_limit);
    double x = state.observation[0];
    double xdot = state.observation[1];
    double theta = state.observation[2];
    double thetadot = state.observation[3];
    double total_mass = p.cart_mass + p.pole_mass;
    double ml = p.pole_mass * p.pole_half_length;
    double sin_t = std::sin(theta);
    double cos_t = std::cos(theta);
    double theta_acc =
        (p.gravity * sin_t +
         cos_t * (-u - ml * thetadot * thetadot * sin_t) / total_mass) /
        (p.pole_half_length *
         (4.0 / 3.0 - p.pole_mass * cos_t * cos_t / total_mass));
    double x_acc =
        (u + ml * (thetadot * thetadot * sin_t - theta_acc * cos_t)) /
        total_mass;
    // semi-implicit Euler: velocities first, then positions with the new
    // velocities
    xdot += x_acc * p.dt;
    thetadot += theta_acc * p.dt;
    x += xdot * p.dt;
    theta += thetadot * p.dt;
    out.state.observation = {x, xdot, theta, thetadot};
    out.reward = 1.0;
    out.done = std::abs(theta) > p.angle_limit ||
               std::abs(x) > p.position_limit ||
               out.state.step_index >= p.max_steps;
  } else {
    const auto& p = env.reach;
    std::vector<double> u(3, 0.0);
    for (std::size_t i = 0; i < u.size() && i < action.size(); ++i)
      u[i] = std::clamp(action[i], -p.action_limit, p.action_limit);
    auto obs = state.observation;
    for (std::size_t i = 0; i < 3; ++i) {
      double v = obs[3 + i];
      v += (u[i] - p.damping * v) * p.dt;
      obs[i] += v * p.dt;
      obs[3 + i] = v;
    }
    out.state.observation = std::move(obs);
    out.reward = reward(env, out.state.observation, state.goal);
    out.done = out.state.step_index >= p.max_steps;
  }
  out.state.done = out.done;
  return out;
}

}  // namespace sacla
