#pragma once

#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "sacla/trainer_config.hpp"

namespace sacla {

// Evaluation settings that live outside the training loop.
struct EvalConfig {
  double epsilon = 0.1;
  std::size_t surface_n = 100;
};

struct AppConfig {
  TrainConfig trainer;
  EvalConfig eval;
};

namespace detail {

using nlohmann::json;

inline void reject_unknown(const json& obj, const std::string& path,
                           std::initializer_list<const char*> allowed) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool ok = false;
    for (const char* k : allowed)
      if (it.key() == k) { ok = true; break; }
    if (!ok)
      throw ConfigError("unknown configuration key: " + path + "." + it.key());
  }
}

template <typename T>
void get_to(const json& obj, const char* key, T& out) {
  if (obj.contains(key)) obj.at(key).get_to(out);
}

}  // namespace detail

// Parse the run configuration document. Every field is optional; unknown
// keys are rejected with a path-qualified error so hyperparameter typos
// cannot pass silently.
inline AppConfig parse_app_config(const nlohmann::json& doc) {
  using detail::get_to;
  using detail::reject_unknown;
  AppConfig app;
  TrainConfig& cfg = app.trainer;
  if (!doc.is_object()) throw ConfigError("configuration root must be an object");
  reject_unknown(doc, "$", {"env", "trainer", "agent", "wm", "nlf", "eval", "io"});

  if (doc.contains("env")) {
    const auto& env = doc.at("env");
    if (env.is_string()) {
      cfg.env.id = env_id_from_string(env.get<std::string>());
    } else {
      reject_unknown(env, "env", {"id", "cartpole", "reach"});
      std::string id = "cartpole";
      get_to(env, "id", id);
      cfg.env.id = env_id_from_string(id);
      if (env.contains("cartpole")) {
        const auto& cp = env.at("cartpole");
        reject_unknown(cp, "env.cartpole",
                       {"cart_mass", "pole_mass", "pole_half_length", "gravity",
                        "dt", "force_limit", "angle_limit", "position_limit",
                        "init_noise", "max_steps"});
        auto& p = cfg.env.cartpole;
        get_to(cp, "cart_mass", p.cart_mass);
        get_to(cp, "pole_mass", p.pole_mass);
        get_to(cp, "pole_half_length", p.pole_half_length);
        get_to(cp, "gravity", p.gravity);
        get_to(cp, "dt", p.dt);
        get_to(cp, "force_limit", p.force_limit);
        get_to(cp, "angle_limit", p.angle_limit);
        get_to(cp, "position_limit", p.position_limit);
        get_to(cp, "init_noise", p.init_noise);
        get_to(cp, "max_steps", p.max_steps);
      }
      if (env.contains("reach")) {
        const auto& rc = env.at("reach");
        reject_unknown(rc, "env.reach",
                       {"dt", "damping", "action_limit", "goal_box",
                        "success_radius", "reward_mode", "max_steps"});
        auto& p = cfg.env.reach;
        get_to(rc, "dt", p.dt);
        get_to(rc, "damping", p.damping);
        get_to(rc, "action_limit", p.action_limit);
        get_to(rc, "goal_box", p.goal_box);
        get_to(rc, "success_radius", p.success_radius);
        get_to(rc, "max_steps", p.max_steps);
        if (rc.contains("reward_mode")) {
          std::string m = rc.at("reward_mode").get<std::string>();
          if (m == "dense")
            p.reward_mode = RewardMode::kDense;
          else if (m == "sparse")
            p.reward_mode = RewardMode::kSparse;
          else
            throw ConfigError("env.reach.reward_mode must be dense or sparse");
        }
      }
    }
  }

  if (doc.contains("trainer")) {
    const auto& tr = doc.at("trainer");
    reject_unknown(tr, "trainer",
                   {"total_steps", "warmup_steps", "updates_per_step",
                    "batch_size", "gamma", "tau", "lr_nlf", "lr_wm", "lr_q",
                    "lr_pi", "lr_alpha", "eval_every", "log_every",
                    "replay_capacity", "seed", "record_walltime"});
    get_to(tr, "total_steps", cfg.total_steps);
    get_to(tr, "warmup_steps", cfg.warmup_steps);
    get_to(tr, "updates_per_step", cfg.updates_per_step);
    get_to(tr, "batch_size", cfg.batch_size);
    get_to(tr, "gamma", cfg.gamma);
    get_to(tr, "tau", cfg.tau);
    get_to(tr, "lr_nlf", cfg.lr_nlf);
    get_to(tr, "lr_wm", cfg.lr_wm);
    get_to(tr, "lr_q", cfg.lr_q);
    get_to(tr, "lr_pi", cfg.lr_pi);
    get_to(tr, "lr_alpha", cfg.lr_alpha);
    get_to(tr, "eval_every", cfg.eval_every);
    get_to(tr, "log_every", cfg.log_every);
    get_to(tr, "replay_capacity", cfg.replay_capacity);
    get_to(tr, "seed", cfg.seed);
    get_to(tr, "record_walltime", cfg.record_walltime);
  }

  if (doc.contains("agent")) {
    const auto& ag = doc.at("agent");
    reject_unknown(ag, "agent", {"mode", "beta", "kappa", "bonus_clip", "hidden"});
    if (ag.contains("mode"))
      cfg.mode.kind = objective_kind_from_string(ag.at("mode").get<std::string>());
    get_to(ag, "beta", cfg.mode.beta);
    get_to(ag, "kappa", cfg.mode.kappa);
    get_to(ag, "bonus_clip", cfg.mode.bonus_clip);
    get_to(ag, "hidden", cfg.hidden_agent);
  }

  if (doc.contains("wm")) {
    const auto& wm = doc.at("wm");
    reject_unknown(wm, "wm", {"hidden"});
    get_to(wm, "hidden", cfg.hidden_wm);
  }

  if (doc.contains("nlf")) {
    const auto& nl = doc.at("nlf");
    reject_unknown(nl, "nlf", {"hidden", "c_min", "k_mc"});
    get_to(nl, "hidden", cfg.hidden_nlf);
    get_to(nl, "c_min", cfg.c_min);
    get_to(nl, "k_mc", cfg.k_mc);
  }

  if (doc.contains("eval")) {
    const auto& ev = doc.at("eval");
    reject_unknown(ev, "eval", {"K", "n", "epsilon", "surface_N"});
    get_to(ev, "K", cfg.eval_K);
    get_to(ev, "n", cfg.eval_n);
    get_to(ev, "epsilon", app.eval.epsilon);
    get_to(ev, "surface_N", app.eval.surface_n);
  }

  if (doc.contains("io")) {
    const auto& io = doc.at("io");
    reject_unknown(io, "io", {"checkpoint", "metrics"});
    get_to(io, "checkpoint", cfg.checkpoint_path);
    get_to(io, "metrics", cfg.metrics_path);
  }

  cfg.config_blob = doc.dump();
  cfg.validate();
  return app;
}

// Apply a dotted-path override (e.g. "trainer.total_steps=100") onto the
// document before parsing. Values parse as JSON when possible, else as
// strings.
inline void apply_override(nlohmann::json& doc, const std::string& kv) {
  auto eq = kv.find('=');
  if (eq == std::string::npos)
    throw ConfigError("override must have the form key=value: " + kv);
  std::string key = kv.substr(0, eq);
  std::string value = kv.substr(eq + 1);
  nlohmann::json parsed = nlohmann::json::parse(value, nullptr, false);
  if (parsed.is_discarded()) parsed = value;
  nlohmann::json* node = &doc;
  std::size_t pos = 0;
  while (true) {
    auto dot = key.find('.', pos);
    std::string part = key.substr(pos, dot == std::string::npos
                                           ? std::string::npos
                                           : dot - pos);
    if (part.empty()) throw ConfigError("bad override key: " + key);
    if (dot == std::string::npos) {
      (*node)[part] = parsed;
      break;
    }
    node = &(*node)[part];
    pos = dot + 1;
  }
}

inline AppConfig load_app_config(const std::string& path,
                                 const std::vector<std::string>& overrides = {}) {
  nlohmann::json doc = nlohmann::json::object();
  if (!path.empty()) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open configuration file: " + path);
    doc = nlohmann::json::parse(f, nullptr, false);
    if (doc.is_discarded())
      throw ConfigError("configuration is not valid JSON: " + path);
  }
  for (const auto& kv : overrides) apply_override(doc, kv);
  return parse_app_config(doc);
}

}  // namespace sacla
