#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "sacla/agent.hpp"
#include "sacla/env.hpp"
#include "sacla/lyapunov.hpp"
#include "sacla/rng.hpp"
#include "sacla/world_model.hpp"

namespace sacla {

// Evaluation region around the goal. Axis offsets are relative to the
// goal-embedded base state; dimensions without an axis stay at the base
// value (velocities zero, positions at the goal).
struct GridAxis {
  std::size_t dim = 0;
  double min_offset = 0.0;
  double max_offset = 0.0;
  std::size_t count = 2;  // lattice resolution along this axis
};

struct GridSpec {
  enum class Mode { kLattice, kUniformRandom };
  std::vector<GridAxis> axes;
  Mode mode = Mode::kUniformRandom;
  std::size_t n = 5000;       // point count in random mode
  std::uint64_t seed = 0;

  void validate() const {
    if (axes.empty()) throw ConfigError("grid needs at least one axis");
    for (const auto& a : axes) {
      if (a.count < 2) throw ConfigError("grid axis count must be >= 2");
      if (!(a.max_offset > a.min_offset))
        throw ConfigError("grid axis range must be nonempty");
    }
    if (mode == Mode::kUniformRandom && n < 1)
      throw ConfigError("random grid needs n >= 1");
  }
};

// Paper-default regions: reach grids position within goal +/- 2 per axis;
// cart-pole grids the (theta, thetadot) phase plane.
inline GridSpec default_grid(const Env& env) {
  GridSpec g;
  if (env.id == EnvId::kCartPole) {
    g.axes = {{2, -0.25, 0.25, 71}, {3, -1.5, 1.5, 71}};
  } else {
    g.axes = {{0, -2.0, 2.0, 18}, {1, -2.0, 2.0, 18}, {2, -2.0, 2.0, 18}};
  }
  return g;
}

inline std::vector<std::vector<double>> grid_points(
    const Env& env, const GridSpec& grid, const std::vector<double>& goal) {
  grid.validate();
  auto base = env.goal_state(goal);
  for (const auto& a : grid.axes)
    if (a.dim >= base.size())
      throw ShapeError("grid axis dimension out of range");
  std::vector<std::vector<double>> points;
  if (grid.mode == GridSpec::Mode::kUniformRandom) {
    Rng rng(grid.seed);
    points.reserve(grid.n);
    for (std::size_t i = 0; i < grid.n; ++i) {
      auto p = base;
      for (const auto& a : grid.axes)
        p[a.dim] = base[a.dim] + rng.uniform(a.min_offset, a.max_offset);
      points.push_back(std::move(p));
    }
  } else {
    std::size_t total = 1;
    for (const auto& a : grid.axes) total *= a.count;
    points.reserve(total);
    std::vector<std::size_t> idx(grid.axes.size(), 0);
    for (std::size_t i = 0; i < total; ++i) {
      auto p = base;
      for (std::size_t k = 0; k < grid.axes.size(); ++k) {
        const auto& a = grid.axes[k];
        double t = static_cast<double>(idx[k]) /
                   static_cast<double>(a.count - 1);
        p[a.dim] = base[a.dim] + a.min_offset +
                   t * (a.max_offset - a.min_offset);
      }
      points.push_back(std::move(p));
      for (std::size_t k = grid.axes.size(); k-- > 0;) {
        if (++idx[k] < grid.axes[k].count) break;
        idx[k] = 0;
      }
    }
  }
  return points;
}

struct StabilityPoint {
  std::vector<double> x;
  std::vector<double> u;
  double lie = 0.0;
  bool negative = false;
};

struct StabilityReport {
  std::vector<StabilityPoint> points;
  double percent_negative = 0.0;
  std::size_t n = 0;
  std::vector<double> goal;
  int K = 0;
  std::uint64_t seed = 0;
  EnvId env_id = EnvId::kCartPole;
};

// Percentage of grid states whose world-model Lie derivative under the
// deterministic policy is strictly negative.
template <typename T>
StabilityReport roa_percent(const Nlf<T>& nlf, const WorldModel<T>& wm,
                            const Policy<T>& policy, const Env& env,
                            const GridSpec& grid,
                            const std::vector<double>& goal, int K,
                            std::uint64_t seed = 0) {
  if (goal.size() != env.goal_dim())
    throw ShapeError("roa_percent: goal dimension mismatch");
  auto points = grid_points(env, grid, goal);
  StabilityReport report;
  report.goal = goal;
  report.K = K;
  report.seed = seed;
  report.env_id = env.id;
  report.n = points.size();
  std::vector<T> gT(goal.begin(), goal.end());
  Rng root(seed);
  std::size_t negatives = 0;
  for (std::size_t i = 0; i < points.size(); ++i) {
    std::vector<T> x(points[i].begin(), points[i].end());
    Rng dummy(0);
    auto ps = policy_sample(policy, std::span<const T>(x),
                            std::span<const T>(gT), dummy, true);
    Rng point_rng = root.derive(i);
    std::vector<T> u(ps.action.begin(), ps.action.end());
    double lie = lie_derivative(nlf, wm, env, x, u, gT, K, point_rng);
    StabilityPoint p;
    p.x = points[i];
    p.u.assign(ps.action.begin(), ps.action.end());
    p.lie = lie;
    p.negative = lie < 0.0;
    if (p.negative) ++negatives;
    report.points.push_back(std::move(p));
  }
  report.percent_negative =
      report.n == 0
          ? 0.0
          : 100.0 * static_cast<double>(negatives) / static_cast<double>(report.n);
  return report;
}

struct EpsilonCheck {
  double epsilon = 0.0;
  std::vector<std::vector<double>> condition_a_violations;
  bool condition_b_ok = false;
  double v_at_goal = 0.0;
  bool passed = false;
  bool degenerate = false;  // n_samples == 0: condition (a) is vacuous
};

// Probabilistic check of the three epsilon-stability conditions on states
// sampled in the sup-norm ball around the goal. V(g) = 0 is unreachable
// under the |.|+c construction, so condition (c) uses V(g) <= 5 c_min.
template <typename T>
EpsilonCheck epsilon_stability_check(const Nlf<T>& nlf, const WorldModel<T>& wm,
                                     const Policy<T>& policy, const Env& env,
                                     const std::vector<double>& goal,
                                     double epsilon, std::size_t n_samples,
                                     std::uint64_t seed, int K = 16) {
  if (!(epsilon > 0.0)) throw ConfigError("epsilon must be positive");
  EpsilonCheck check;
  check.epsilon = epsilon;
  check.degenerate = n_samples == 0;
  auto base = env.goal_state(goal);
  std::size_t ball_dims = env.id == EnvId::kCartPole ? 4u : 6u;
  Rng rng(seed);
  std::vector<T> gT(goal.begin(), goal.end());
  bool b_ok = true;
  for (std::size_t i = 0; i < n_samples; ++i) {
    std::vector<double> x;
    double norm = 0.0;
    do {
      x = base;
      norm = 0.0;
      for (std::size_t d = 0; d < ball_dims; ++d) {
        double off = rng.uniform(-epsilon, epsilon);
        x[d] = base[d] + off;
        norm = std::max(norm, std::abs(off));
      }
    } while (norm < 1e-6);  // exclude the goal itself
    std::vector<T> xT(x.begin(), x.end());
    Rng dummy(0);
    auto ps = policy_sample(policy, std::span<const T>(xT),
                            std::span<const T>(gT), dummy, true);
    std::vector<T> u(ps.action.begin(), ps.action.end());
    Rng point_rng = rng.derive(i);
    double lie = lie_derivative(nlf, wm, env, xT, u, gT, K, point_rng);
    if (!(lie < 0.0)) check.condition_a_violations.push_back(x);
    if (!(static_cast<double>(v_value(nlf, env, xT, gT)) > 0.0)) b_ok = false;
  }
  check.condition_b_ok = b_ok;
  check.v_at_goal = static_cast<double>(v_at_goal(nlf));
  check.passed = check.condition_a_violations.empty() && check.condition_b_ok &&
                 check.v_at_goal <= 5.0 * static_cast<double>(nlf.c_min);
  return check;
}

struct SurfaceSample {
  std::int64_t t = 0;
  double v = 0.0;
  double p = 0.0;
  std::uint64_t trajectory_id = 0;
};

struct TrajectoryRecord {
  std::vector<std::vector<double>> states;  // length T+1
  std::vector<std::vector<double>> actions; // length T
  std::vector<double> goal;
  double init_log_density = 0.0;
};

struct SurfaceResult {
  std::vector<SurfaceSample> samples;
  TrajectoryRecord trajectory;
};

// Roll out one real episode; at each step draw N world-model samples and
// record (t, Lyapunov value, predictive density) -- the empirical surface M.
template <typename T>
SurfaceResult surface_build(const Env& env, const Policy<T>& policy,
                            const WorldModel<T>& wm, const Nlf<T>& nlf,
                            std::uint64_t episode_seed, std::size_t N) {
  if (N < 1) throw ConfigError("surface_build: N must be >= 1");
  Rng root(episode_seed);
  Rng env_rng = root.derive("env");
  Rng act_rng = root.derive("actions");
  Rng wm_rng = root.derive("wm");
  SurfaceResult out;
  EnvState state = env_reset(env, env_rng);
  out.trajectory.goal = state.goal;
  out.trajectory.init_log_density = state.init_log_density;
  out.trajectory.states.push_back(state.observation);
  std::vector<T> gT(state.goal.begin(), state.goal.end());
  std::int64_t t = 0;
  while (!state.done) {
    std::vector<T> x(state.observation.begin(), state.observation.end());
    auto ps = policy_sample(policy, std::span<const T>(x),
                            std::span<const T>(gT), act_rng, false);
    std::vector<T> u(ps.action.begin(), ps.action.end());
    auto pred = wm_predict(wm, std::span<const T>(x), std::span<const T>(u));
    auto draws = wm_sample(pred, wm_rng, N);
    for (const auto& xs : draws) {
      SurfaceSample s;
      s.t = t;
      s.v = static_cast<double>(v_value(nlf, env, xs, gT));
      s.p = wm_density(pred, std::span<const T>(xs)).first;
      s.trajectory_id = episode_seed;
      out.samples.push_back(s);
    }
    std::vector<double> ud(ps.action.begin(), ps.action.end());
    auto step = env_step(env, state, ud);
    out.trajectory.actions.push_back(ud);
    out.trajectory.states.push_back(step.state.observation);
    state = step.state;
    ++t;
  }
  return out;
}

// log p(x0) + sum_t [log f~(x_{t+1}|x_t,u_t) + log pi(u_t|x_t,g)].
template <typename T>
double trajectory_log_probability(const TrajectoryRecord& traj,
                                  const WorldModel<T>& wm,
                                  const Policy<T>& policy) {
  double lp = traj.init_log_density;
  std::vector<T> gT(traj.goal.begin(), traj.goal.end());
  for (std::size_t t = 0; t < traj.actions.size(); ++t) {
    std::vector<T> x(traj.states[t].begin(), traj.states[t].end());
    std::vector<T> u(traj.actions[t].begin(), traj.actions[t].end());
    std::vector<T> xn(traj.states[t + 1].begin(), traj.states[t + 1].end());
    auto pred = wm_predict(wm, std::span<const T>(x), std::span<const T>(u));
    lp += wm_log_density(pred, std::span<const T>(xn));
    lp += policy_log_prob(policy, std::span<const T>(x),
                          std::span<const T>(gT), std::span<const T>(u));
  }
  return lp;
}

enum class ExportFormat { kCsv, kJson };

namespace detail {

inline std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

inline void write_file_atomic(const std::string& path,
                              const std::string& content) {
  std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open for writing: " + path);
    f.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!f) {
      f.close();
      std::filesystem::remove(tmp);
      throw IoError("write failed: " + path);
    }
  }
  std::filesystem::rename(tmp, path);
}

inline int lie_sign(double lie) { return lie < 0.0 ? -1 : (lie > 0.0 ? 1 : 0); }

}  // namespace detail

// Plot-data export. Reach grids: (x,y,z,u1,u2,u3,L,sign); cart-pole phase
// grids: (theta,theta_dot,L,sign). JSON mirrors the CSV records.
inline void export_plot_data(const StabilityReport& report,
                             const std::string& path, ExportFormat format) {
  bool cartpole = report.env_id == EnvId::kCartPole;
  std::vector<std::string> cols =
      cartpole ? std::vector<std::string>{"theta", "theta_dot", "L", "sign"}
               : std::vector<std::string>{"x", "y", "z", "u1", "u2",
                                          "u3", "L", "sign"};
  auto row_values = [&](const StabilityPoint& p) {
    std::vector<std::string> v;
    if (cartpole) {
      v.push_back(detail::fmt_double(p.x[2]));
      v.push_back(detail::fmt_double(p.x[3]));
    } else {
      for (int d = 0; d < 3; ++d) v.push_back(detail::fmt_double(p.x[d]));
      for (std::size_t d = 0; d < 3; ++d)
        v.push_back(detail::fmt_double(d < p.u.size() ? p.u[d] : 0.0));
    }
    v.push_back(detail::fmt_double(p.lie));
    v.push_back(std::to_string(detail::lie_sign(p.lie)));
    return v;
  };
  std::string out;
  if (format == ExportFormat::kCsv) {
    for (std::size_t i = 0; i < cols.size(); ++i)
      out += (i ? "," : "") + cols[i];
    out += "\n";
    for (const auto& p : report.points) {
      auto v = row_values(p);
      for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + v[i];
      out += "\n";
    }
  } else {
    out += "[";
    for (std::size_t r = 0; r < report.points.size(); ++r) {
      auto v = row_values(report.points[r]);
      out += r ? ",\n" : "\n";
      out += "  {";
      for (std::size_t i = 0; i < v.size(); ++i) {
        out += (i ? ", " : "") + ("\"" + cols[i] + "\": ") + v[i];
      }
      out += "}";
    }
    out += "\n]\n";
  }
  detail::write_file_atomic(path, out);
}

inline void export_plot_data(const std::vector<SurfaceSample>& surface,
                             const std::string& path, ExportFormat format) {
  std::string out;
  if (format == ExportFormat::kCsv) {
    out += "t,V,P\n";
    for (const auto& s : surface) {
      out += std::to_string(s.t) + "," + detail::fmt_double(s.v) + "," +
             detail::fmt_double(s.p) + "\n";
    }
  } else {
    out += "[";
    for (std::size_t r = 0; r < surface.size(); ++r) {
      const auto& s = surface[r];
      out += r ? ",\n" : "\n";
      out += "  {\"t\": " + std::to_string(s.t) +
             ", \"V\": " + detail::fmt_double(s.v) +
             ", \"P\": " + detail::fmt_double(s.p) + "}";
    }
    out += "\n]\n";
  }
  detail::write_file_atomic(path, out);
}

}  // namespace sacla
