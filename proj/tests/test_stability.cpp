#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <span>
#include <vector>

#include "doctest.h"
#include "json.hpp"
#include "sacla/stability.hpp"
#include "testing_util.hpp"

using namespace sacla;

namespace {

Env cartpole_env() {
  Env e;
  e.id = EnvId::kCartPole;
  return e;
}

Env reach_env() {
  Env e;
  e.id = EnvId::kReach;
  return e;
}

// V = |x0| + c_min
Nlf<float> first_coord_nlf() {
  auto nlf = Nlf<float>::make(4, {}, 0);
  nlf.net.fill(0.0f);
  nlf.net.at("W0").data[0] = 1.0f;
  return nlf;
}

// linear world model mu0 = x0 + slope * x0, other dims frozen, all stds at
// the clamp floor
WorldModel<float> linear_wm(float slope) {
  auto wm = WorldModel<float>::make(4, 1, {}, 0);
  wm.net.fill(0.0f);
  wm.net.at("W0").data[0] = slope;  // input x0 -> residual head 0
  for (int j = 4; j < 8; ++j) wm.net.at("b0").data[j] = -5.0f;
  return wm;
}

Policy<float> zero_policy() {
  auto p = Policy<float>::make(4, 4, 1, 3.0f, {4}, 0);
  p.net.fill(0.0f);
  return p;
}

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream f(path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(f, line)) lines.push_back(line);
  return lines;
}

std::string read_all(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("constant value function yields zero percent negative") {
  Env env = cartpole_env();
  auto nlf = Nlf<float>::make(4, {6}, 1);
  nlf.net.fill(0.0f);
  auto wm = WorldModel<float>::make(4, 1, {6}, 2);
  auto policy = zero_policy();
  GridSpec grid = default_grid(env);
  grid.n = 50;
  auto report = roa_percent(nlf, wm, policy, env, grid,
                            std::vector<double>(4, 0.0), 0, 7);
  CHECK(report.percent_negative == 0.0);
  for (const auto& p : report.points) {
    CHECK(p.lie == 0.0);
    CHECK(!p.negative);
  }
}

TEST_CASE("three of four negative points give exactly 75 percent") {
  Env env = cartpole_env();
  auto nlf = first_coord_nlf();
  auto policy = zero_policy();
  // fixed pull mu0 = x0 - 1: Lie = |x0 - 1| - |x0|, negative iff x0 > 0.5
  auto wm = linear_wm(0.0f);
  wm.net.at("b0").data[0] = -1.0f;
  GridSpec grid;
  grid.mode = GridSpec::Mode::kLattice;
  grid.axes = {{0, 0.25, 4.0, 4}};  // x0 = 0.25, 1.5, 2.75, 4.0
  auto report = roa_percent(nlf, wm, policy, env, grid,
                            std::vector<double>(4, 0.0), 0, 0);
  CHECK(report.n == 4);
  CHECK(report.percent_negative == 75.0);
}

TEST_CASE("percent equals an independent recount of the stored points") {
  Env env = reach_env();
  auto nlf = Nlf<float>::make(6, {10}, 3);
  auto wm = WorldModel<float>::make(9, 3, {10}, 4);
  auto policy = Policy<float>::make(9, 3, 3, 1.0f, {8}, 5);
  GridSpec grid = default_grid(env);
  grid.n = 120;
  std::vector<double> goal = {0.4, -0.3, 0.2};
  auto report = roa_percent(nlf, wm, policy, env, grid, goal, 4, 99);
  CHECK(report.n == 120);
  CHECK(report.points.size() == 120);
  std::size_t neg = 0;
  for (const auto& p : report.points) {
    CHECK(p.negative == (p.lie < 0.0));
    if (p.lie < 0.0) ++neg;
  }
  CHECK(report.percent_negative == 100.0 * double(neg) / 120.0);
}

TEST_CASE("grid specs are validated") {
  Env env = cartpole_env();
  GridSpec bad;
  CHECK_THROWS_AS(grid_points(env, bad, std::vector<double>(4, 0.0)),
                  ConfigError);
  bad.axes = {{0, 1.0, -1.0, 5}};
  CHECK_THROWS_AS(grid_points(env, bad, std::vector<double>(4, 0.0)),
                  ConfigError);
  GridSpec oob;
  oob.axes = {{9, -1.0, 1.0, 5}};
  CHECK_THROWS_AS(grid_points(env, oob, std::vector<double>(4, 0.0)),
                  ShapeError);
  auto nlf = Nlf<float>::make(4, {4}, 0);
  auto wm = WorldModel<float>::make(4, 1, {4}, 0);
  auto policy = zero_policy();
  GridSpec ok = default_grid(env);
  CHECK_THROWS_AS(roa_percent(nlf, wm, policy, env, ok,
                              std::vector<double>(3, 0.0), 0, 0),
                  ShapeError);
}

TEST_CASE("lattice grids enumerate the full cross product") {
  Env env = cartpole_env();
  GridSpec grid;
  grid.mode = GridSpec::Mode::kLattice;
  grid.axes = {{2, -0.2, 0.2, 3}, {3, -1.0, 1.0, 5}};
  auto pts = grid_points(env, grid, std::vector<double>(4, 0.0));
  CHECK(pts.size() == 15);
  for (const auto& p : pts) {
    CHECK(p[0] == 0.0);  // ungridded dims stay at the base state
    CHECK(p[1] == 0.0);
  }
  CHECK(pts.front()[2] == -0.2);
  CHECK(pts.back()[2] == 0.2);
}

TEST_CASE("epsilon check: contraction passes, expansion fails clause (a)") {
  Env env = cartpole_env();
  auto nlf = first_coord_nlf();
  auto policy = zero_policy();
  std::vector<double> goal(4, 0.0);

  auto contracting = linear_wm(-0.5f);  // mu0 = 0.5 x0
  auto pass = epsilon_stability_check(nlf, contracting, policy, env, goal,
                                      0.1, 64, 5, 0);
  CHECK(pass.condition_a_violations.empty());
  CHECK(pass.condition_b_ok);
  CHECK(pass.v_at_goal == doctest::Approx(1e-3));
  CHECK(pass.passed);
  CHECK(!pass.degenerate);

  auto expanding = linear_wm(0.5f);  // mu0 = 1.5 x0
  auto fail = epsilon_stability_check(nlf, expanding, policy, env, goal, 0.1,
                                      64, 5, 0);
  CHECK(fail.condition_a_violations.size() == 64);
  CHECK(!fail.passed);

  // clause (c): V = |x0 - 5| has its minimum away from the goal; a model
  // contracting toward that minimum keeps (a) clean while V(g) = 5.001
  auto lifted = nlf;
  lifted.net.at("b0").data[0] = -5.0f;
  auto toward_five = linear_wm(-0.5f);
  toward_five.net.at("b0").data[0] = 2.5f;  // mu0 = 0.5 x0 + 2.5
  auto veto = epsilon_stability_check(lifted, toward_five, policy, env, goal,
                                      0.1, 64, 5, 0);
  CHECK(veto.condition_a_violations.empty());
  CHECK(!veto.passed);

  // verdict always equals the clause-by-clause recombination
  for (const auto& c : {pass, fail, veto})
    CHECK(c.passed == (c.condition_a_violations.empty() &&
                       c.condition_b_ok && c.v_at_goal <= 5.0 * 1e-3));
}

TEST_CASE("epsilon check degenerate and invalid cases") {
  Env env = cartpole_env();
  auto nlf = Nlf<float>::make(4, {4}, 1);
  nlf.net.fill(0.0f);  // constant V
  auto wm = WorldModel<float>::make(4, 1, {4}, 2);
  auto policy = zero_policy();
  std::vector<double> goal(4, 0.0);

  // constant V: L = 0 everywhere, not < 0, so clause (a) fails at every
  // sample
  auto c = epsilon_stability_check(nlf, wm, policy, env, goal, 0.1, 16, 3, 0);
  CHECK(c.condition_a_violations.size() == 16);
  CHECK(!c.passed);

  // no samples: clause (a) vacuous, verdict from (b) and (c) alone
  auto d = epsilon_stability_check(nlf, wm, policy, env, goal, 0.1, 0, 3, 0);
  CHECK(d.degenerate);
  CHECK(d.passed);

  CHECK_THROWS_AS(
      epsilon_stability_check(nlf, wm, policy, env, goal, 0.0, 16, 3, 0),
      ConfigError);
}

TEST_CASE("surface has exactly T*N samples with nonnegative densities") {
  Env env = cartpole_env();
  env.cartpole.max_steps = 12;
  env.cartpole.angle_limit = 1.5;
  env.cartpole.position_limit = 50.0;
  auto policy = zero_policy();
  auto wm = WorldModel<float>::make(4, 1, {8}, 3);
  auto nlf = Nlf<float>::make(4, {8}, 4);

  auto result = surface_build(env, policy, wm, nlf, 42, 7);
  CHECK(result.samples.size() == 12 * 7);
  for (const auto& s : result.samples) CHECK(s.p >= 0.0);
  CHECK(result.trajectory.states.size() == 13);
  CHECK(result.trajectory.actions.size() == 12);

  // deterministic by seed
  auto again = surface_build(env, policy, wm, nlf, 42, 7);
  CHECK(again.samples.size() == result.samples.size());
  for (std::size_t i = 0; i < again.samples.size(); ++i) {
    CHECK(again.samples[i].v == result.samples[i].v);
    CHECK(again.samples[i].p == result.samples[i].p);
  }

  CHECK_THROWS_AS(surface_build(env, policy, wm, nlf, 42, 0), ConfigError);
}

TEST_CASE("per-step surface means agree with a folded-normal oracle") {
  Env env = cartpole_env();
  env.cartpole.max_steps = 8;
  env.cartpole.angle_limit = 1.5;
  env.cartpole.position_limit = 50.0;
  auto policy = zero_policy();
  auto nlf = first_coord_nlf();
  auto wm = WorldModel<float>::make(4, 1, {4}, 1);
  wm.net.fill(0.0f);  // x~ dim 0 ~ N(x0, 1)

  const std::size_t N = 200;
  auto result = surface_build(env, policy, wm, nlf, 11, N);
  REQUIRE(result.samples.size() == 8 * N);
  for (int t = 0; t < 8; ++t) {
    double mean = 0.0, m2 = 0.0;
    for (std::size_t i = 0; i < N; ++i) {
      double v = result.samples[t * N + i].v;
      double d = v - mean;
      mean += d / double(i + 1);
      m2 += d * (v - mean);
    }
    double sd = std::sqrt(m2 / N);
    // E|N(m,1)| in closed form, plus the c_min offset
    double m = result.trajectory.states[t][0];
    double expect = std::sqrt(2.0 / M_PI) * std::exp(-0.5 * m * m) +
                    m * std::erf(m / std::sqrt(2.0)) + 1e-3;
    CHECK(std::abs(mean - expect) < 4.0 * sd / std::sqrt(double(N)));
  }
}

TEST_CASE("trajectory log-probability matches a direct-product oracle") {
  Env env = reach_env();
  env.reach.max_steps = 3;
  auto policy = Policy<double>::make(9, 3, 3, 1.0, {8}, 5);
  auto wm = WorldModel<double>::make(9, 3, {8}, 6);
  auto nlf = Nlf<double>::make(6, {6}, 7);

  auto result = surface_build(env, policy, wm, nlf, 17, 2);
  const auto& traj = result.trajectory;
  REQUIRE(traj.actions.size() == 3);

  // zero-length prefix reduces to the initial log-density
  TrajectoryRecord empty;
  empty.states = {traj.states[0]};
  empty.goal = traj.goal;
  empty.init_log_density = traj.init_log_density;
  CHECK(trajectory_log_probability(empty, wm, policy) ==
        traj.init_log_density);

  // direct product of all component densities, then one log
  double product = std::exp(traj.init_log_density);
  std::vector<double> g = traj.goal;
  for (int t = 0; t < 3; ++t) {
    std::vector<double> x = traj.states[t];
    std::vector<double> u = traj.actions[t];
    std::vector<double> xn = traj.states[t + 1];
    auto pred =
        wm_predict(wm, std::span<const double>(x), std::span<const double>(u));
    double pw = 1.0;
    for (int i = 0; i < 9; ++i) {
      double d = xn[i] - pred.mean[i];
      pw *= std::exp(-0.5 * d * d / (pred.std[i] * pred.std[i])) /
            (pred.std[i] * std::sqrt(2.0 * M_PI));
    }
    // squashed-Gaussian density via the inverse transform
    auto in = policy.input_for(std::span<const double>(x),
                               std::span<const double>(g));
    auto head = mlp_forward<double>(policy.net, policy.spec, in);
    double pp = 1.0;
    for (int j = 0; j < 3; ++j) {
      double a = std::atanh(u[j] / 1.0);
      double sd = std::exp(std::clamp(head[3 + j], -20.0, 2.0));
      double d = (a - head[j]) / sd;
      double base = std::exp(-0.5 * d * d) / (sd * std::sqrt(2.0 * M_PI));
      double th = std::tanh(a);
      pp *= base / (1.0 * (1.0 - th * th));
    }
    product *= pw * pp;
  }
  double lp = trajectory_log_probability(traj, wm, policy);
  CHECK(std::abs(lp - std::log(product)) < 1e-9);

  // one-step prefix: manual sum of the three log components
  TrajectoryRecord one;
  one.states = {traj.states[0], traj.states[1]};
  one.actions = {traj.actions[0]};
  one.goal = traj.goal;
  one.init_log_density = traj.init_log_density;
  std::vector<double> x0 = traj.states[0], u0 = traj.actions[0],
                      x1 = traj.states[1];
  auto pred0 =
      wm_predict(wm, std::span<const double>(x0), std::span<const double>(u0));
  double expect_one =
      traj.init_log_density + wm_log_density(pred0, std::span<const double>(x1)) +
      policy_log_prob(policy, std::span<const double>(x0),
                      std::span<const double>(g), std::span<const double>(u0));
  CHECK(trajectory_log_probability(one, wm, policy) ==
        doctest::Approx(expect_one).epsilon(1e-12));
}

TEST_CASE("plot export: formats agree and re-export is byte-identical") {
  Env env = reach_env();
  auto nlf = Nlf<float>::make(6, {8}, 3);
  auto wm = WorldModel<float>::make(9, 3, {8}, 4);
  auto policy = Policy<float>::make(9, 3, 3, 1.0f, {8}, 5);
  GridSpec grid = default_grid(env);
  grid.n = 25;
  std::vector<double> goal = {0.1, 0.2, -0.3};
  auto report = roa_percent(nlf, wm, policy, env, grid, goal, 4, 1);

  std::string csv_path = "/tmp/sacla_test_report.csv";
  std::string json_path = "/tmp/sacla_test_report.json";
  export_plot_data(report, csv_path, ExportFormat::kCsv);
  export_plot_data(report, json_path, ExportFormat::kJson);

  auto lines = read_lines(csv_path);
  REQUIRE(lines.size() == 26);
  CHECK(lines[0] == "x,y,z,u1,u2,u3,L,sign");

  auto doc = nlohmann::json::parse(read_all(json_path));
  REQUIRE(doc.size() == 25);
  for (std::size_t r = 0; r < 25; ++r) {
    std::stringstream ss(lines[r + 1]);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    REQUIRE(cells.size() == 8);
    const char* names[] = {"x", "y", "z", "u1", "u2", "u3", "L", "sign"};
    for (int c = 0; c < 8; ++c)
      CHECK(std::stod(cells[c]) ==
            doctest::Approx(doc[r][names[c]].get<double>()).epsilon(1e-12));
    double lie = report.points[r].lie;
    CHECK(std::stod(cells[6]) == doctest::Approx(lie));
    CHECK(std::stoi(cells[7]) == (lie < 0.0 ? -1 : (lie > 0.0 ? 1 : 0)));
  }

  auto first = read_all(csv_path);
  export_plot_data(report, csv_path, ExportFormat::kCsv);
  CHECK(read_all(csv_path) == first);

  // empty report: header only
  StabilityReport none;
  none.env_id = EnvId::kCartPole;
  export_plot_data(none, csv_path, ExportFormat::kCsv);
  auto empty_lines = read_lines(csv_path);
  REQUIRE(empty_lines.size() == 1);
  CHECK(empty_lines[0] == "theta,theta_dot,L,sign");

  // surface export schema
  Env cenv = cartpole_env();
  cenv.cartpole.max_steps = 4;
  cenv.cartpole.angle_limit = 1.5;
  auto cp_nlf = Nlf<float>::make(4, {4}, 0);
  auto cp_wm = WorldModel<float>::make(4, 1, {4}, 0);
  auto cp_policy = zero_policy();
  auto surf = surface_build(cenv, cp_policy, cp_wm, cp_nlf, 3, 5);
  std::string surf_path = "/tmp/sacla_test_surface.csv";
  export_plot_data(surf.samples, surf_path, ExportFormat::kCsv);
  auto surf_lines = read_lines(surf_path);
  CHECK(surf_lines[0] == "t,V,P");
  CHECK(surf_lines.size() == 1 + 4 * 5);

  CHECK_THROWS_AS(export_plot_data(report, "/nonexistent-dir/x.csv",
                                   ExportFormat::kCsv),
                  IoError);
}

TEST_CASE("evaluation never mutates parameters") {
  Env env = cartpole_env();
  auto nlf = Nlf<float>::make(4, {8}, 1);
  auto wm = WorldModel<float>::make(4, 1, {8}, 2);
  auto policy = Policy<float>::make(4, 4, 1, 3.0f, {8}, 3);

  auto nlf_copy = nlf.net;
  auto wm_copy = wm.net;
  auto policy_copy = policy.net;

  GridSpec grid = default_grid(env);
  grid.n = 30;
  std::vector<double> goal(4, 0.0);
  roa_percent(nlf, wm, policy, env, grid, goal, 4, 5);
  epsilon_stability_check(nlf, wm, policy, env, goal, 0.1, 16, 6);
  Env senv = env;
  senv.cartpole.max_steps = 5;
  senv.cartpole.angle_limit = 1.5;
  surface_build(senv, policy, wm, nlf, 7, 3);

  for (std::size_t e = 0; e < nlf_copy.entries.size(); ++e)
    CHECK(nlf.net.entries[e].data == nlf_copy.entries[e].data);
  for (std::size_t e = 0; e < wm_copy.entries.size(); ++e)
    CHECK(wm.net.entries[e].data == wm_copy.entries[e].data);
  for (std::size_t e = 0; e < policy_copy.entries.size(); ++e)
    CHECK(policy.net.entries[e].data == policy_copy.entries[e].data);
}
