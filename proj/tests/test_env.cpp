#include <cmath>
#include <vector>

#include "doctest.h"
#include "sacla/env.hpp"

using namespace sacla;

namespace {

Env make_cartpole() {
  Env e;
  e.id = EnvId::kCartPole;
  return e;
}

Env make_reach() {
  Env e;
  e.id = EnvId::kReach;
  return e;
}

// total mechanical energy consistent with the implemented dynamics: the
// pole is a uniform rod of length 2*l (hence the 4/3 effective inertia),
// so KE = 1/2 (M+m) xdot^2 + m l xdot thetadot cos(theta)
//       + (2/3) m l^2 thetadot^2, PE = m g l cos(theta).
// conserved exactly by the continuous equations with u=0.
double cartpole_energy(const CartPoleParams& p, const std::vector<double>& s) {
  double xdot = s[1], theta = s[2], thetadot = s[3];
  double m = p.pole_mass, M = p.cart_mass, l = p.pole_half_length;
  return 0.5 * (M + m) * xdot * xdot +
         m * l * xdot * thetadot * std::cos(theta) +
         (2.0 / 3.0) * m * l * l * thetadot * thetadot +
         m * p.gravity * l * std::cos(theta);
}

}  // namespace

TEST_CASE("cart-pole equilibrium is a fixed point") {
  Env env = make_cartpole();
  EnvState s;
  s.observation = {0.0, 0.0, 0.0, 0.0};
  s.goal = {0.0, 0.0, 0.0, 0.0};
  auto r = env_step(env, s, {0.0});
  for (double v : r.state.observation) CHECK(v == 0.0);
  CHECK(r.reward == 1.0);
  CHECK(!r.done);
}

TEST_CASE("cart-pole single step matches hand evaluation") {
  Env env = make_cartpole();
  const auto& p = env.cartpole;
  EnvState s;
  s.observation = {0.0, 0.0, 0.1, 0.0};
  s.goal = {0.0, 0.0, 0.0, 0.0};
  auto r = env_step(env, s, {0.0});

  // hand evaluation of the dynamics at (0,0,0.1,0) with u=0
  double theta = 0.1;
  double total_mass = p.cart_mass + p.pole_mass;
  double ml = p.pole_mass * p.pole_half_length;
  double sin_t = std::sin(theta), cos_t = std::cos(theta);
  double theta_acc =
      (p.gravity * sin_t + cos_t * (0.0 - 0.0) / total_mass) /
      (p.pole_half_length *
       (4.0 / 3.0 - p.pole_mass * cos_t * cos_t / total_mass));
  double x_acc = (0.0 + ml * (0.0 - theta_acc * cos_t)) / total_mass;
  double xdot = x_acc * p.dt;
  double thetadot = theta_acc * p.dt;
  double x = xdot * p.dt;
  double theta_next = theta + thetadot * p.dt;

  CHECK(std::abs(r.state.observation[0] - x) < 1e-9);
  CHECK(std::abs(r.state.observation[1] - xdot) < 1e-9);
  CHECK(std::abs(r.state.observation[2] - theta_next) < 1e-9);
  CHECK(std::abs(r.state.observation[3] - thetadot) < 1e-9);
  CHECK(r.state.step_index == 1);
}

TEST_CASE("cart-pole per-step energy drift is second order in dt") {
  // with u=0 the continuous dynamics conserve the energy above; the
  // semi-implicit scheme changes it by O(dt^2) per step. integrating one
  // coarse step at dt and the same horizon at dt/10 should leave the
  // dt/10 run roughly 10x closer to the initial energy, and a single
  // dt/10 step roughly 100x closer.
  auto run = [](double dt, int steps) {
    Env env = make_cartpole();
    env.cartpole.dt = dt;
    env.cartpole.angle_limit = 1.5;  // keep the episode alive
    env.cartpole.position_limit = 100.0;
    EnvState s;
    s.observation = {0.0, 0.3, 0.05, 0.4};
    s.goal = {0.0, 0.0, 0.0, 0.0};
    for (int i = 0; i < steps; ++i) {
      auto r = env_step(env, s, {0.0});
      s = r.state;
      s.done = false;
    }
    return cartpole_energy(env.cartpole, s.observation);
  };
  Env env0 = make_cartpole();
  EnvState s0;
  s0.observation = {0.0, 0.3, 0.05, 0.4};
  double e0 = cartpole_energy(env0.cartpole, s0.observation);

  double d_coarse = std::abs(run(0.02, 1) - e0);
  double d_fine_horizon = std::abs(run(0.002, 10) - e0);
  double d_fine_step = std::abs(run(0.002, 1) - e0);
  CHECK(d_coarse > 0.0);
  CHECK(d_fine_horizon * 4.0 < d_coarse);    // expect ~10x
  CHECK(d_fine_step * 30.0 < d_coarse);      // expect ~100x
}

TEST_CASE("reach velocity magnitude is non-increasing with zero action") {
  Env env = make_reach();
  EnvState s = env_reset(env, static_cast<std::uint64_t>(11));
  s.observation[3] = 0.8;
  s.observation[4] = -0.3;
  s.observation[5] = 0.2;
  double prev = std::sqrt(0.8 * 0.8 + 0.3 * 0.3 + 0.2 * 0.2);
  for (int i = 0; i < 50; ++i) {
    auto r = env_step(env, s, {0.0, 0.0, 0.0});
    s = r.state;
    s.done = false;
    double v2 = 0.0;
    for (int k = 3; k < 6; ++k) v2 += s.observation[k] * s.observation[k];
    double cur = std::sqrt(v2);
    CHECK(cur < prev);
    prev = cur;
  }
}

TEST_CASE("goal stays constant within an episode") {
  Env env = make_reach();
  Rng rng(99);
  EnvState s = env_reset(env, rng);
  auto goal0 = s.goal;
  for (int i = 0; i < 20; ++i) {
    auto r = env_step(env, s, {rng.uniform(-1, 1), rng.uniform(-1, 1),
                               rng.uniform(-1, 1)});
    s = r.state;
    CHECK(s.goal == goal0);
  }
}

TEST_CASE("reset is deterministic and bounded") {
  Env cp = make_cartpole();
  auto a = env_reset(cp, static_cast<std::uint64_t>(7));
  auto b = env_reset(cp, static_cast<std::uint64_t>(7));
  CHECK(a.observation == b.observation);
  for (double v : a.observation) CHECK(std::abs(v) <= 0.01);
  CHECK(a.goal == std::vector<double>(4, 0.0));
  CHECK(!a.done);
  CHECK(a.step_index == 0);
  // uniform box density: (1 / (2*0.01))^4
  CHECK(a.init_log_density ==
        doctest::Approx(-4.0 * std::log(0.02)).epsilon(1e-12));

  Env rc = make_reach();
  auto r0 = env_reset(rc, static_cast<std::uint64_t>(7));
  for (int i = 0; i < 3; ++i) CHECK(r0.observation[i] == 0.0);
  for (int i = 3; i < 6; ++i) CHECK(r0.observation[i] == 0.0);
  for (int i = 0; i < 3; ++i) CHECK(r0.observation[6 + i] == r0.goal[i]);
  CHECK(r0.init_log_density == 0.0);
}

TEST_CASE("reach goals are uniform over the box (statistical)") {
  Env env = make_reach();
  const int N = 10000;
  Rng rng(4242);
  double sum[3] = {0, 0, 0};
  for (int i = 0; i < N; ++i) {
    auto s = env_reset(env, rng);
    for (int k = 0; k < 3; ++k) {
      sum[k] += s.goal[k];
      CHECK(std::abs(s.goal[k]) <= 1.0);
    }
  }
  // uniform on [-1,1]: mean 0, sigma = 2/sqrt(12); 3 sigma / sqrt(N) bound
  double tol = 3.0 * (2.0 / std::sqrt(12.0)) / std::sqrt((double)N);
  for (int k = 0; k < 3; ++k) CHECK(std::abs(sum[k] / N) < tol);
}

TEST_CASE("reward definitions") {
  Env rc = make_reach();
  std::vector<double> obs(9, 0.0), goal = {0.5, 0.0, 0.0};
  CHECK(reward(rc, obs, goal) == doctest::Approx(-0.5).epsilon(1e-12));

  std::vector<double> at_goal(9, 0.0);
  at_goal[0] = 0.5;
  CHECK(reward(rc, at_goal, goal) == 0.0);

  rc.reach.reward_mode = RewardMode::kSparse;
  std::vector<double> close(9, 0.0);
  close[0] = 0.5 - 0.04;
  CHECK(reward(rc, close, goal) == 0.0);
  CHECK(reward(rc, obs, goal) == -1.0);

  Env cp = make_cartpole();
  std::vector<double> any = {0.1, 0.2, 0.05, -0.1};
  CHECK(reward(cp, any, std::vector<double>(4, 0.0)) == 1.0);
}

TEST_CASE("stepping a finished episode throws and actions are clamped") {
  Env env = make_cartpole();
  EnvState s;
  s.observation = {0.0, 0.0, 0.0, 0.0};
  s.goal = {0.0, 0.0, 0.0, 0.0};
  s.done = true;
  CHECK_THROWS_AS(env_step(env, s, {0.0}), UsageError);

  s.done = false;
  auto big = env_step(env, s, {100.0});
  auto lim = env_step(env, s, {3.0});
  CHECK(big.state.observation == lim.state.observation);
}

TEST_CASE("cart-pole terminates on angle, position, and budget") {
  Env env = make_cartpole();
  EnvState s;
  s.goal = {0.0, 0.0, 0.0, 0.0};

  s.observation = {0.0, 0.0, 0.199, 3.0};  // about to tip
  auto r = env_step(env, s, {0.0});
  CHECK(r.done);

  s.observation = {0.999, 3.0, 0.0, 0.0};  // about to leave the track
  r = env_step(env, s, {0.0});
  CHECK(r.done);

  s.observation = {0.0, 0.0, 0.0, 0.0};
  s.step_index = env.cartpole.max_steps - 1;
  r = env_step(env, s, {0.0});
  CHECK(r.done);

  Env rc = make_reach();
  EnvState rs = env_reset(rc, static_cast<std::uint64_t>(1));
  rs.step_index = rc.reach.max_steps - 1;
  auto rr = env_step(rc, rs, {0.0, 0.0, 0.0});
  CHECK(rr.done);
}

TEST_CASE("invalid parameters are rejected") {
  Env cp = make_cartpole();
  cp.cartpole.dt = 0.0;
  CHECK_THROWS_AS(env_reset(cp, static_cast<std::uint64_t>(0)), ConfigError);

  Env cp2 = make_cartpole();
  cp2.cartpole.angle_limit = 2.0;
  CHECK_THROWS_AS(env_reset(cp2, static_cast<std::uint64_t>(0)), ConfigError);

  Env rc = make_reach();
  rc.reach.success_radius = 2.0;
  CHECK_THROWS_AS(env_reset(rc, static_cast<std::uint64_t>(0)), ConfigError);

  CHECK_THROWS_AS(env_id_from_string("pendulum"), ConfigError);
  CHECK(env_id_from_string("cartpole") == EnvId::kCartPole);
  CHECK(env_id_from_string("reach") == EnvId::kReach);
}

TEST_CASE("features vanish exactly at the goal state") {
  Env cp = make_cartpole();
  std::vector<double> goal(4, 0.0);
  auto f = cp.features<float>(cp.goal_state(goal), goal);
  for (float v : f) CHECK(v == 0.0f);

  Env rc = make_reach();
  std::vector<double> g3 = {0.3, -0.7, 0.1};
  auto fr = rc.features<float>(rc.goal_state(g3), g3);
  CHECK(fr.size() == 6);
  for (float v : fr) CHECK(v == 0.0f);

  // away from the goal the position block is p - g and the velocity block
  // passes through
  std::vector<double> obs = {1.0, 2.0, 3.0, 0.5, -0.5, 0.25, 0.3, -0.7, 0.1};
  auto fx = rc.features<double>(obs, g3);
  CHECK(fx[0] == doctest::Approx(0.7));
  CHECK(fx[1] == doctest::Approx(2.7));
  CHECK(fx[2] == doctest::Approx(2.9));
  CHECK(fx[3] == doctest::Approx(0.5));
  CHECK(fx[4] == doctest::Approx(-0.5));
  CHECK(fx[5] == doctest::Approx(0.25));
}
