#pragma once

#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include "sacla/agent.hpp"
#include "sacla/env.hpp"

namespace sacla {

struct TrainConfig {
  Env env;
  std::int64_t total_steps = 20000;
  std::int64_t warmup_steps = 1000;
  int updates_per_step = 1;
  std::size_t batch_size = 256;
  double gamma = 0.99;
  double tau = 0.005;
  double lr_nlf = 3e-4, lr_wm = 3e-4, lr_q = 3e-4, lr_pi = 3e-4,
         lr_alpha = 3e-4;
  ObjectiveMode mode;
  int k_mc = 4;
  double c_min = 1e-3;
  std::vector<std::size_t> hidden_agent = {256, 256};
  std::vector<std::size_t> hidden_wm = {256, 256};
  std::vector<std::size_t> hidden_nlf = {64, 64};
  std::int64_t eval_every = 10000;
  std::int64_t log_every = 1000;
  int eval_K = 16;
  std::size_t eval_n = 5000;
  std::size_t replay_capacity = 1'000'000;
  std::uint64_t seed = 0;
  std::string checkpoint_path;
  std::string metrics_path;
  std::string resume_from;
  bool record_walltime = false;
  std::string config_blob;  // original JSON, embedded in checkpoints

  void validate() const {
    env.validate();
    mode.validate();
    if (total_steps < warmup_steps)
      throw ConfigError("total_steps must be >= warmup_steps");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (updates_per_step < 0) throw ConfigError("updates_per_step must be >= 0");
    if (gamma < 0.0 || gamma > 1.0) throw ConfigError("gamma must lie in [0,1]");
    if (tau < 0.0 || tau > 1.0) throw ConfigError("tau must lie in [0,1]");
    for (double lr : {lr_nlf, lr_wm, lr_q, lr_pi, lr_alpha})
      if (lr <= 0.0) throw ConfigError("learning rates must be positive");
    if (k_mc < 1) throw ConfigError("k_mc must be >= 1");
    if (replay_capacity < 1) throw ConfigError("replay capacity must be >= 1");
  }

  // Stable fingerprint used to reject resume/eval against a checkpoint from
  // a different configuration. Paths are excluded on purpose.
  std::uint64_t hash() const {
    std::string s = to_string(env.id);
    char buf[256];
    auto add = [&](double v) {
      std::snprintf(buf, sizeof buf, "|%.17g", v);
      s += buf;
    };
    const auto& cp = env.cartpole;
    for (double v : {cp.cart_mass, cp.pole_mass, cp.pole_half_length,
                     cp.gravity, cp.dt, cp.force_limit, cp.angle_limit,
                     cp.position_limit, cp.init_noise,
                     static_cast<double>(cp.max_steps)})
      add(v);
    const auto& rp = env.reach;
    for (double v : {rp.dt, rp.damping, rp.action_limit, rp.goal_box,
                     rp.success_radius,
                     static_cast<double>(rp.reward_mode == RewardMode::kDense),
                     static_cast<double>(rp.max_steps)})
      add(v);
    // total_steps is a budget, not part of the dynamics: resuming a run with
    // a larger budget must accept the original checkpoint.
    for (double v :
         {static_cast<double>(warmup_steps),
          static_cast<double>(updates_per_step),
          static_cast<double>(batch_size), gamma, tau, lr_nlf, lr_wm, lr_q,
          lr_pi, lr_alpha, static_cast<double>(static_cast<int>(mode.kind)),
          mode.beta, mode.kappa, mode.bonus_clip, static_cast<double>(k_mc),
          c_min,
          static_cast<double>(eval_every), static_cast<double>(log_every),
          static_cast<double>(eval_K), static_cast<double>(eval_n),
          static_cast<double>(replay_capacity), static_cast<double>(seed)})
      add(v);
    for (const auto& widths : {hidden_agent, hidden_wm, hidden_nlf}) {
      s += "|[";
      for (auto w : widths) s += std::to_string(w) + ",";
      s += "]";
    }
    std::uint64_t h = 1469598103934665603ull;
    for (char c : s) {
      h ^= static_cast<std::uint64_t>(static_cast<unsigned char>(c));
      h *= 1099511628211ull;
    }
    return h;
  }
};

}  // namespace sacla
