#pragma once

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "sacla/agent.hpp"
#include "sacla/checkpoint.hpp"
#include "sacla/env.hpp"
#include "sacla/lyapunov.hpp"
#include "sacla/replay.hpp"
#include "sacla/stability.hpp"
#include "sacla/trainer_config.hpp"
#include "sacla/world_model.hpp"

namespace sacla {

namespace detail {

inline std::uint64_t f64_bits(double v) {
  std::uint64_t b;
  std::memcpy(&b, &v, 8);
  return b;
}
inline double f64_from_bits(std::uint64_t b) {
  double v;
  std::memcpy(&v, &b, 8);
  return v;
}

inline void pack_store(Checkpoint& ck, const std::string& prefix,
                       const ParamStore<float>& store) {
  for (const auto& e : store.entries) {
    auto& ne = ck.arrays.add(prefix + "/" + e.name, e.shape);
    ne.data = e.data;
  }
}

inline void unpack_store(const Checkpoint& ck, const std::string& prefix,
                         ParamStore<float>& store) {
  for (auto& e : store.entries) {
    const auto& se = ck.arrays.at(prefix + "/" + e.name);
    if (se.shape != e.shape)
      throw FormatError("checkpoint shape mismatch for " + prefix + "/" +
                        e.name);
    e.data = se.data;
  }
}

inline void pack_vec(Checkpoint& ck, const std::string& name,
                     const std::vector<float>& v,
                     std::vector<std::size_t> shape) {
  auto& e = ck.arrays.add(name, std::move(shape));
  e.data = v;
}

}  // namespace detail

// Full training state for SACLA / SAC / POLYC runs. float32 learning
// arithmetic; environment physics stays double.
struct Trainer {
  using S = float;

  TrainConfig cfg;
  Env env;
  EnvState state;
  bool need_reset = true;
  double episode_return_acc = 0.0;
  double last_episode_return = 0.0;

  ReplayBuffer<S> buffer;
  Policy<S> policy;
  Critics<S> critics;
  Nlf<S> nlf;
  WorldModel<S> wm;
  Temperature<S> temperature;

  AdamState<S> adam_nlf, adam_wm, adam_q1, adam_q2, adam_pi, adam_alpha;
  Rng rng_env, rng_action, rng_buffer, rng_nlf, rng_critic, rng_policy,
      rng_shaping;
  std::int64_t global_step = 0;

  double last_wm_nll = 0.0, last_nlf_loss = 0.0, last_critic_loss = 0.0,
         last_policy_loss = 0.0;

  // instrumentation hook, called with the update stage name
  std::function<void(const char*)> stage_hook;

  static Trainer make(const TrainConfig& cfg) {
    cfg.validate();
    Trainer t;
    t.cfg = cfg;
    t.env = cfg.env;
    t.buffer = ReplayBuffer<S>(cfg.replay_capacity);
    Rng root(cfg.seed);
    std::size_t od = t.env.obs_dim(), gd = t.env.goal_dim(),
                ad = t.env.action_dim();
    t.policy = Policy<S>::make(od, gd, ad,
                               static_cast<S>(t.env.action_scale()),
                               cfg.hidden_agent,
                               root.derive("init/policy").next_u64());
    t.critics = Critics<S>::make(od, gd, ad, cfg.hidden_agent,
                                 root.derive("init/critics").next_u64());
    t.nlf = Nlf<S>::make(t.env.feature_dim(), cfg.hidden_nlf,
                         root.derive("init/nlf").next_u64());
    t.nlf.k_mc = cfg.k_mc;
    t.nlf.c_min = static_cast<S>(cfg.c_min);
    t.wm = WorldModel<S>::make(od, ad, cfg.hidden_wm,
                               root.derive("init/wm").next_u64());
    t.temperature = Temperature<S>::make(
        static_cast<S>(-static_cast<double>(ad)));
    t.adam_nlf = AdamState<S>::for_params(t.nlf.net, static_cast<S>(cfg.lr_nlf));
    t.adam_wm = AdamState<S>::for_params(t.wm.net, static_cast<S>(cfg.lr_wm));
    t.adam_q1 = AdamState<S>::for_params(t.critics.q1, static_cast<S>(cfg.lr_q));
    t.adam_q2 = AdamState<S>::for_params(t.critics.q2, static_cast<S>(cfg.lr_q));
    t.adam_pi = AdamState<S>::for_params(t.policy.net, static_cast<S>(cfg.lr_pi));
    t.adam_alpha = AdamState<S>::for_params(t.temperature.store,
                                            static_cast<S>(cfg.lr_alpha));
    t.rng_env = root.derive("env");
    t.rng_action = root.derive("action");
    t.rng_buffer = root.derive("buffer");
    t.rng_nlf = root.derive("nlf");
    t.rng_critic = root.derive("critic");
    t.rng_policy = root.derive("policy");
    t.rng_shaping = root.derive("shaping");
    return t;
  }

  std::vector<S> cast(const std::vector<double>& v) const {
    return std::vector<S>(v.begin(), v.end());
  }

  void do_updates() {
    auto sampled = buffer.sample(rng_buffer, cfg.batch_size);
    NlfBatch<S> nbatch;
    AgentBatch<S> abatch;
    abatch.size = sampled.size();
    WmBatch<S> wbatch;
    wbatch.size = sampled.size();
    for (const auto* tr : sampled) {
      nbatch.x.push_back(tr->x);
      nbatch.g.push_back(tr->g);
      abatch.x.push_back(tr->x);
      abatch.g.push_back(tr->g);
      abatch.u.push_back(tr->u);
      abatch.xn.push_back(tr->next);
      abatch.r.push_back(static_cast<double>(tr->r));
      abatch.done.push_back(tr->done);
      wbatch.x.insert(wbatch.x.end(), tr->x.begin(), tr->x.end());
      wbatch.u.insert(wbatch.u.end(), tr->u.begin(), tr->u.end());
      wbatch.next.insert(wbatch.next.end(), tr->next.begin(), tr->next.end());
    }
    ActionSampler<S> sampler = [this](const std::vector<S>& x,
                                      const std::vector<S>& g, Rng& rng) {
      return policy_sample(policy, std::span<const S>(x),
                           std::span<const S>(g), rng, false)
          .action;
    };
    if (stage_hook) stage_hook("nlf");
    last_nlf_loss = nlf_update(nlf, wm, env, sampler, nbatch, rng_nlf, adam_nlf);
    if (stage_hook) stage_hook("wm");
    last_wm_nll = wm_train_step(wm, adam_wm, wbatch);
    if (stage_hook) stage_hook("q");
    auto closses =
        critic_update(critics, policy, temperature, abatch, cfg.mode, nlf, wm,
                      env, cfg.gamma, rng_critic, rng_shaping, adam_q1, adam_q2);
    last_critic_loss = 0.5 * (closses.q1 + closses.q2);
    if (stage_hook) stage_hook("policy");
    auto presult = policy_update(policy, critics, temperature, abatch,
                                 rng_policy, adam_pi);
    last_policy_loss = presult.loss;
    if (stage_hook) stage_hook("alpha");
    temperature_update(temperature, presult.log_probs, adam_alpha);
    if (stage_hook) stage_hook("targets");
    polyak_update(critics.q1_target, critics.q1, static_cast<S>(cfg.tau));
    polyak_update(critics.q2_target, critics.q2, static_cast<S>(cfg.tau));
  }

  // One environment step plus the per-step gradient work.
  void step() {
    if (need_reset) {
      state = env_reset(env, rng_env);
      episode_return_acc = 0.0;
      need_reset = false;
    }
    std::vector<double> action(env.action_dim());
    if (global_step < cfg.warmup_steps) {
      double s = env.action_scale();
      for (auto& a : action) a = rng_action.uniform(-s, s);
    } else {
      auto ps = policy_sample(policy, std::span<const S>(cast(state.observation)),
                              std::span<const S>(cast(state.goal)), rng_action,
                              false);
      action.assign(ps.action.begin(), ps.action.end());
    }
    auto res = env_step(env, state, action);
    Transition<S> tr;
    tr.x = cast(state.observation);
    tr.g = cast(state.goal);
    tr.u = cast(action);
    tr.r = static_cast<S>(res.reward);
    tr.next = cast(res.state.observation);
    tr.done = res.done;
    buffer.push(std::move(tr));
    episode_return_acc += res.reward;
    state = res.state;
    if (res.done) {
      last_episode_return = episode_return_acc;
      need_reset = true;
    }
    ++global_step;
    if (global_step > cfg.warmup_steps)
      for (int k = 0; k < cfg.updates_per_step; ++k) do_updates();
  }

  StabilityReport evaluate_roa() const {
    GridSpec grid = default_grid(env);
    grid.mode = GridSpec::Mode::kUniformRandom;
    grid.n = cfg.eval_n;
    grid.seed = Rng(cfg.seed).derive("eval-grid").next_u64() ^
                static_cast<std::uint64_t>(global_step);
    Rng goal_rng(grid.seed);
    std::vector<double> goal =
        need_reset ? env_reset(env, goal_rng).goal : state.goal;
    std::uint64_t eval_seed =
        Rng(cfg.seed).derive("eval").next_u64() ^
        static_cast<std::uint64_t>(global_step);
    return roa_percent(nlf, wm, policy, env, grid, goal, cfg.eval_K, eval_seed);
  }

  Checkpoint snapshot() const {
    Checkpoint ck;
    detail::pack_store(ck, "policy", policy.net);
    detail::pack_store(ck, "q1", critics.q1);
    detail::pack_store(ck, "q2", critics.q2);
    detail::pack_store(ck, "q1t", critics.q1_target);
    detail::pack_store(ck, "q2t", critics.q2_target);
    detail::pack_store(ck, "nlf", nlf.net);
    detail::pack_store(ck, "wm", wm.net);
    detail::pack_store(ck, "alpha", temperature.store);
    const std::pair<const char*, const AdamState<S>*> adams[] = {
        {"adam_nlf", &adam_nlf}, {"adam_wm", &adam_wm},
        {"adam_q1", &adam_q1},   {"adam_q2", &adam_q2},
        {"adam_pi", &adam_pi},   {"adam_alpha", &adam_alpha}};
    for (auto [name, a] : adams) {
      detail::pack_store(ck, std::string(name) + "/m", a->m);
      detail::pack_store(ck, std::string(name) + "/v", a->v);
      ck.manifest.emplace_back(std::string(name) + "/steps", a->step_count);
    }
    detail::pack_vec(ck, "wm_stat/in_mean", wm.input_stat.mean,
                     {wm.input_stat.mean.size()});
    detail::pack_vec(ck, "wm_stat/in_m2", wm.input_stat.m2,
                     {wm.input_stat.m2.size()});
    detail::pack_vec(ck, "wm_stat/in_count", {wm.input_stat.count}, {1});
    detail::pack_vec(ck, "wm_stat/res_mean", wm.residual_stat.mean,
                     {wm.residual_stat.mean.size()});
    detail::pack_vec(ck, "wm_stat/res_m2", wm.residual_stat.m2,
                     {wm.residual_stat.m2.size()});
    detail::pack_vec(ck, "wm_stat/res_count", {wm.residual_stat.count}, {1});
    // replay buffer
    std::size_t n = buffer.size();
    std::size_t od = env.obs_dim(), gd = env.goal_dim(), ad = env.action_dim();
    std::vector<float> bx, bg, bu, bn, br, bd;
    for (const auto& tr : buffer.storage) {
      bx.insert(bx.end(), tr.x.begin(), tr.x.end());
      bg.insert(bg.end(), tr.g.begin(), tr.g.end());
      bu.insert(bu.end(), tr.u.begin(), tr.u.end());
      bn.insert(bn.end(), tr.next.begin(), tr.next.end());
      br.push_back(tr.r);
      bd.push_back(tr.done ? 1.0f : 0.0f);
    }
    detail::pack_vec(ck, "buffer/x", bx, {n, od});
    detail::pack_vec(ck, "buffer/g", bg, {n, gd});
    detail::pack_vec(ck, "buffer/u", bu, {n, ad});
    detail::pack_vec(ck, "buffer/next", bn, {n, od});
    detail::pack_vec(ck, "buffer/r", br, {n});
    detail::pack_vec(ck, "buffer/done", bd, {n});
    auto& m = ck.manifest;
    m.emplace_back("config_hash", cfg.hash());
    m.emplace_back("global_step", static_cast<std::uint64_t>(global_step));
    m.emplace_back("buffer/cursor", buffer.cursor);
    m.emplace_back("need_reset", need_reset ? 1u : 0u);
    m.emplace_back("episode_return_acc", detail::f64_bits(episode_return_acc));
    m.emplace_back("last_episode_return",
                   detail::f64_bits(last_episode_return));
    m.emplace_back("env/step_index",
                   static_cast<std::uint64_t>(state.step_index));
    m.emplace_back("env/done", state.done ? 1u : 0u);
    m.emplace_back("env/init_log_density",
                   detail::f64_bits(state.init_log_density));
    m.emplace_back("env/obs_dim", state.observation.size());
    for (std::size_t i = 0; i < state.observation.size(); ++i)
      m.emplace_back("env/obs/" + std::to_string(i),
                     detail::f64_bits(state.observation[i]));
    m.emplace_back("env/goal_dim", state.goal.size());
    for (std::size_t i = 0; i < state.goal.size(); ++i)
      m.emplace_back("env/goal/" + std::to_string(i),
                     detail::f64_bits(state.goal[i]));
    const std::pair<const char*, const Rng*> rngs[] = {
        {"rng/env", &rng_env},       {"rng/action", &rng_action},
        {"rng/buffer", &rng_buffer}, {"rng/nlf", &rng_nlf},
        {"rng/critic", &rng_critic}, {"rng/policy", &rng_policy},
        {"rng/shaping", &rng_shaping}};
    for (auto [name, r] : rngs) m.emplace_back(name, r->state);
    if (!cfg.config_blob.empty()) {
      auto& e = ck.arrays.add("config/json", {cfg.config_blob.size()});
      for (std::size_t i = 0; i < cfg.config_blob.size(); ++i)
        e.data[i] = static_cast<float>(
            static_cast<unsigned char>(cfg.config_blob[i]));
    }
    return ck;
  }

  static Trainer from_checkpoint(const TrainConfig& cfg, const Checkpoint& ck) {
    if (ck.manifest_at("config_hash") != cfg.hash())
      throw FormatError("checkpoint was produced by a different configuration");
    Trainer t = make(cfg);
    detail::unpack_store(ck, "policy", t.policy.net);
    detail::unpack_store(ck, "q1", t.critics.q1);
    detail::unpack_store(ck, "q2", t.critics.q2);
    detail::unpack_store(ck, "q1t", t.critics.q1_target);
    detail::unpack_store(ck, "q2t", t.critics.q2_target);
    detail::unpack_store(ck, "nlf", t.nlf.net);
    detail::unpack_store(ck, "wm", t.wm.net);
    detail::unpack_store(ck, "alpha", t.temperature.store);
    const std::pair<const char*, AdamState<S>*> adams[] = {
        {"adam_nlf", &t.adam_nlf}, {"adam_wm", &t.adam_wm},
        {"adam_q1", &t.adam_q1},   {"adam_q2", &t.adam_q2},
        {"adam_pi", &t.adam_pi},   {"adam_alpha", &t.adam_alpha}};
    for (auto [name, a] : adams) {
      detail::unpack_store(ck, std::string(name) + "/m", a->m);
      detail::unpack_store(ck, std::string(name) + "/v", a->v);
      a->step_count = ck.manifest_at(std::string(name) + "/steps");
    }
    t.wm.input_stat.mean = ck.arrays.at("wm_stat/in_mean").data;
    t.wm.input_stat.m2 = ck.arrays.at("wm_stat/in_m2").data;
    t.wm.input_stat.count = ck.arrays.at("wm_stat/in_count").data[0];
    t.wm.residual_stat.mean = ck.arrays.at("wm_stat/res_mean").data;
    t.wm.residual_stat.m2 = ck.arrays.at("wm_stat/res_m2").data;
    t.wm.residual_stat.count = ck.arrays.at("wm_stat/res_count").data[0];
    std::size_t od = t.env.obs_dim(), gd = t.env.goal_dim(),
                ad = t.env.action_dim();
    const auto& bx = ck.arrays.at("buffer/x");
    std::size_t n = bx.shape[0];
    const auto& bg = ck.arrays.at("buffer/g").data;
    const auto& bu = ck.arrays.at("buffer/u").data;
    const auto& bn = ck.arrays.at("buffer/next").data;
    const auto& br = ck.arrays.at("buffer/r").data;
    const auto& bd = ck.arrays.at("buffer/done").data;
    t.buffer.storage.clear();
    for (std::size_t i = 0; i < n; ++i) {
      Transition<S> tr;
      tr.x.assign(bx.data.begin() + i * od, bx.data.begin() + (i + 1) * od);
      tr.g.assign(bg.begin() + i * gd, bg.begin() + (i + 1) * gd);
      tr.u.assign(bu.begin() + i * ad, bu.begin() + (i + 1) * ad);
      tr.next.assign(bn.begin() + i * od, bn.begin() + (i + 1) * od);
      tr.r = br[i];
      tr.done = bd[i] != 0.0f;
      t.buffer.storage.push_back(std::move(tr));
    }
    t.buffer.cursor = ck.manifest_at("buffer/cursor");
    t.global_step =
        static_cast<std::int64_t>(ck.manifest_at("global_step"));
    t.need_reset = ck.manifest_at("need_reset") != 0;
    t.episode_return_acc =
        detail::f64_from_bits(ck.manifest_at("episode_return_acc"));
    t.last_episode_return =
        detail::f64_from_bits(ck.manifest_at("last_episode_return"));
    t.state.step_index =
        static_cast<std::int64_t>(ck.manifest_at("env/step_index"));
    t.state.done = ck.manifest_at("env/done") != 0;
    t.state.init_log_density =
        detail::f64_from_bits(ck.manifest_at("env/init_log_density"));
    t.state.observation.resize(ck.manifest_at("env/obs_dim"));
    for (std::size_t i = 0; i < t.state.observation.size(); ++i)
      t.state.observation[i] = detail::f64_from_bits(
          ck.manifest_at("env/obs/" + std::to_string(i)));
    t.state.goal.resize(ck.manifest_at("env/goal_dim"));
    for (std::size_t i = 0; i < t.state.goal.size(); ++i)
      t.state.goal[i] =
          detail::f64_from_bits(ck.manifest_at("env/goal/" + std::to_string(i)));
    const std::pair<const char*, Rng*> rngs[] = {
        {"rng/env", &t.rng_env},       {"rng/action", &t.rng_action},
        {"rng/buffer", &t.rng_buffer}, {"rng/nlf", &t.rng_nlf},
        {"rng/critic", &t.rng_critic}, {"rng/policy", &t.rng_policy},
        {"rng/shaping", &t.rng_shaping}};
    for (auto [name, r] : rngs) r->state = ck.manifest_at(name);
    return t;
  }
};

struct TrainResult {
  double final_roa_percent = 0.0;
  bool evaluated = false;
  std::int64_t steps = 0;
};

// Algorithm 1 end to end: interact, store, update in the fixed order
// (nlf, wm, q, policy, alpha, targets), evaluate and checkpoint on cadence.
inline TrainResult train_run(
    const TrainConfig& cfg,
    const std::function<void(const char*)>& stage_hook = nullptr) {
  Trainer trainer;
  bool resumed = false;
  if (!cfg.resume_from.empty()) {
    trainer = Trainer::from_checkpoint(cfg, checkpoint_load(cfg.resume_from));
    resumed = true;
  } else {
    trainer = Trainer::make(cfg);
  }
  trainer.stage_hook = stage_hook;

  std::ofstream metrics;
  if (!cfg.metrics_path.empty()) {
    metrics.open(cfg.metrics_path,
                 resumed ? std::ios::app : std::ios::trunc);
    if (!metrics) throw IoError("cannot open metrics file: " + cfg.metrics_path);
    if (!resumed)
      metrics << "step,episode_return,wm_nll,nlf_loss,critic_loss,policy_loss,"
                 "alpha,roa_percent,wall_time\n";
  }
  auto t0 = std::chrono::steady_clock::now();
  TrainResult result;

  auto write_row = [&](bool with_roa, double roa) {
    if (!metrics.is_open()) return;
    char buf[512];
    double wall = 0.0;
    if (cfg.record_walltime)
      wall = std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                           t0)
                 .count();
    std::string roa_s = with_roa ? detail::fmt_double(roa) : std::string();
    std::snprintf(buf, sizeof buf, "%lld,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%s,%.3f\n",
                  static_cast<long long>(trainer.global_step),
                  trainer.last_episode_return, trainer.last_wm_nll,
                  trainer.last_nlf_loss, trainer.last_critic_loss,
                  trainer.last_policy_loss,
                  static_cast<double>(trainer.temperature.alpha()),
                  roa_s.c_str(), wall);
    metrics << buf;
    metrics.flush();
  };

  try {
    while (trainer.global_step < cfg.total_steps) {
      trainer.step();
      bool at_eval = cfg.eval_every > 0 &&
                     trainer.global_step % cfg.eval_every == 0;
      bool at_end = trainer.global_step == cfg.total_steps;
      bool at_log = cfg.log_every > 0 &&
                    trainer.global_step % cfg.log_every == 0;
      double roa = 0.0;
      if (at_eval || at_end) {
        auto report = trainer.evaluate_roa();
        roa = report.percent_negative;
        result.final_roa_percent = roa;
        result.evaluated = true;
        if (!cfg.checkpoint_path.empty())
          checkpoint_save(cfg.checkpoint_path, trainer.snapshot());
      }
      if (at_eval || at_end || at_log) write_row(at_eval || at_end, roa);
    }
  } catch (const NumericError& e) {
    if (metrics.is_open()) {
      metrics << "# numeric-abort at step " << trainer.global_step << ": "
              << e.what() << "\n";
      metrics.flush();
    }
    throw;
  }
  result.steps = trainer.global_step;
  return result;
}

}  // namespace sacla
