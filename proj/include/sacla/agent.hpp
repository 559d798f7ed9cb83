#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "sacla/adam.hpp"
#include "sacla/env.hpp"
#include "sacla/lyapunov.hpp"
#include "sacla/mlp.hpp"
#include "sacla/rng.hpp"
#include "sacla/world_model.hpp"

namespace sacla {

namespace detail {

// log(1 - tanh(a)^2), computed in a form that stays finite for large |a|:
// 2 * (log 2 - a - softplus(-2a)).
inline double log1m_tanh_sq(double a) {
  double t = -2.0 * a;
  double softplus = t > 0.0 ? t + std::log1p(std::exp(-t))
                            : std::log1p(std::exp(t));
  return 2.0 * (0.6931471805599453 - a - softplus);
}

}  // namespace detail

// Squashed-Gaussian policy u = scale * tanh(mean + std * z). The network
// emits (mean, log-std) per action dimension.
template <typename T>
struct Policy {
  static constexpr T kLogStdMin = T(-20);
  static constexpr T kLogStdMax = T(2);

  MlpSpec spec;  // (obs + goal) -> 2 * action_dim
  ParamStore<T> net;
  std::vector<T> action_scale;
  std::size_t obs_dim = 0;
  std::size_t goal_dim = 0;
  std::size_t action_dim = 0;

  static Policy make(std::size_t obs_dim, std::size_t goal_dim,
                     std::size_t action_dim, T scale,
                     const std::vector<std::size_t>& hidden,
                     std::uint64_t seed) {
    Policy p;
    p.obs_dim = obs_dim;
    p.goal_dim = goal_dim;
    p.action_dim = action_dim;
    p.action_scale.assign(action_dim, scale);
    p.spec.widths.push_back(obs_dim + goal_dim);
    for (auto h : hidden) p.spec.widths.push_back(h);
    p.spec.widths.push_back(2 * action_dim);
    p.net = mlp_init<T>(p.spec, seed);
    return p;
  }

  std::vector<T> input_for(std::span<const T> x, std::span<const T> g) const {
    std::vector<T> in(obs_dim + goal_dim);
    std::copy(x.begin(), x.end(), in.begin());
    std::copy(g.begin(), g.end(), in.begin() + obs_dim);
    return in;
  }
};

template <typename T>
struct PolicySample {
  std::vector<T> action;
  double log_prob = 0.0;
  std::vector<T> pre_squash;  // a = mean + std * z
  std::vector<T> noise;       // z
};

namespace detail {

// Turn one row of policy head outputs plus a noise vector into an action
// and its log-density (with the tanh change-of-variables correction).
template <typename T>
PolicySample<T> squash_row(const Policy<T>& policy, const T* head,
                           const std::vector<double>& z) {
  std::size_t adim = policy.action_dim;
  PolicySample<T> out;
  out.action.resize(adim);
  out.pre_squash.resize(adim);
  out.noise.resize(adim);
  double logp = 0.0;
  for (std::size_t j = 0; j < adim; ++j) {
    double mean = static_cast<double>(head[j]);
    double s = std::clamp(static_cast<double>(head[adim + j]),
                          static_cast<double>(Policy<T>::kLogStdMin),
                          static_cast<double>(Policy<T>::kLogStdMax));
    double std_ = std::exp(s);
    double a = mean + std_ * z[j];
    double scale = static_cast<double>(policy.action_scale[j]);
    out.pre_squash[j] = static_cast<T>(a);
    out.noise[j] = static_cast<T>(z[j]);
    // tanh saturates to exactly 1 in floating point for large |a|; nudge
    // inside the open box so recorded actions stay density-evaluable
    double t_a = std::clamp(std::tanh(a), -1.0 + 1e-6, 1.0 - 1e-6);
    out.action[j] = static_cast<T>(scale * t_a);
    logp += -0.5 * z[j] * z[j] - s - 0.5 * kLog2Pi - std::log(scale) -
            log1m_tanh_sq(a);
  }
  out.log_prob = logp;
  return out;
}

}  // namespace detail

template <typename T>
PolicySample<T> policy_sample(const Policy<T>& policy, std::span<const T> x,
                              std::span<const T> g, Rng& rng,
                              bool deterministic = false) {
  auto in = policy.input_for(x, g);
  auto head = mlp_forward<T>(policy.net, policy.spec, in);
  std::vector<double> z(policy.action_dim, 0.0);
  if (!deterministic)
    for (auto& v : z) v = rng.normal();
  return detail::squash_row(policy, head.data(), z);
}

// Log-density of a recorded action under the current policy. The action must
// lie strictly inside the action box.
template <typename T>
double policy_log_prob(const Policy<T>& policy, std::span<const T> x,
                       std::span<const T> g, std::span<const T> action) {
  auto in = policy.input_for(x, g);
  auto head = mlp_forward<T>(policy.net, policy.spec, in);
  std::size_t adim = policy.action_dim;
  double logp = 0.0;
  for (std::size_t j = 0; j < adim; ++j) {
    double scale = static_cast<double>(policy.action_scale[j]);
    double t = static_cast<double>(action[j]) / scale;
    if (!(t > -1.0 && t < 1.0))
      throw NumericError("policy_log_prob: action outside the open box");
    double a = std::atanh(t);
    double mean = static_cast<double>(head[j]);
    double s = std::clamp(static_cast<double>(head[adim + j]),
                          static_cast<double>(Policy<T>::kLogStdMin),
                          static_cast<double>(Policy<T>::kLogStdMax));
    double std_ = std::exp(s);
    double d = (a - mean) / std_;
    logp += -0.5 * d * d - s - 0.5 * kLog2Pi - std::log(scale) -
            detail::log1m_tanh_sq(a);
  }
  return logp;
}

// Twin critics with Polyak-averaged targets.
template <typename T>
struct Critics {
  MlpSpec spec;  // (obs + goal + action) -> 1
  ParamStore<T> q1, q2, q1_target, q2_target;
  std::size_t obs_dim = 0, goal_dim = 0, action_dim = 0;

  static Critics make(std::size_t obs_dim, std::size_t goal_dim,
                      std::size_t action_dim,
                      const std::vector<std::size_t>& hidden,
                      std::uint64_t seed) {
    Critics c;
    c.obs_dim = obs_dim;
    c.goal_dim = goal_dim;
    c.action_dim = action_dim;
    c.spec.widths.push_back(obs_dim + goal_dim + action_dim);
    for (auto h : hidden) c.spec.widths.push_back(h);
    c.spec.widths.push_back(1);
    Rng root(seed);
    c.q1 = mlp_init<T>(c.spec, root.derive("q1").next_u64());
    c.q2 = mlp_init<T>(c.spec, root.derive("q2").next_u64());
    c.q1_target = c.q1;
    c.q2_target = c.q2;
    return c;
  }

  std::vector<T> input_for(std::span<const T> x, std::span<const T> g,
                           std::span<const T> u) const {
    std::vector<T> in(obs_dim + goal_dim + action_dim);
    std::copy(x.begin(), x.end(), in.begin());
    std::copy(g.begin(), g.end(), in.begin() + obs_dim);
    std::copy(u.begin(), u.end(), in.begin() + obs_dim + goal_dim);
    return in;
  }
};

template <typename T>
struct Temperature {
  ParamStore<T> store;  // single entry "log_alpha"
  T target_entropy = T(-1);

  static Temperature make(T target_entropy) {
    Temperature t;
    t.store.add("log_alpha", {1});
    t.target_entropy = target_entropy;
    return t;
  }

  T log_alpha() const { return store.entries[0].data[0]; }
  T alpha() const { return std::exp(store.entries[0].data[0]); }
};

struct ObjectiveMode {
  enum class Kind { kSac, kSacla, kPolyc };
  Kind kind = Kind::kSacla;
  double beta = 0.5;        // sacla reward/Lyapunov trade-off
  double kappa = 0.1;       // polyc bonus scale
  double bonus_clip = 10.0;

  void validate() const {
    if (beta < 0.0 || beta > 1.0)
      throw ConfigError("objective beta must lie in [0,1]");
    if (kappa <= 0.0) throw ConfigError("objective kappa must be positive");
    if (bonus_clip <= 0.0)
      throw ConfigError("objective bonus_clip must be positive");
  }
};

inline ObjectiveMode::Kind objective_kind_from_string(const std::string& s) {
  if (s == "sac") return ObjectiveMode::Kind::kSac;
  if (s == "sacla") return ObjectiveMode::Kind::kSacla;
  if (s == "polyc") return ObjectiveMode::Kind::kPolyc;
  throw ConfigError("unknown objective mode: " + s);
}

// Per-transition shaped reward, recomputed at update time with the current
// Lyapunov function and world model.
template <typename T>
double augmented_reward(const ObjectiveMode& mode, double r,
                        const std::vector<T>& x, const std::vector<T>& u,
                        const std::vector<T>& g, const Nlf<T>& nlf,
                        const WorldModel<T>& wm, const Env& env, Rng& rng) {
  switch (mode.kind) {
    case ObjectiveMode::Kind::kSac:
      return r;
    case ObjectiveMode::Kind::kSacla: {
      if (mode.beta == 0.0) return r;
      double loss = lyapunov_point_loss(nlf, wm, env, x, u, g, rng);
      return (1.0 - mode.beta) * r +
             mode.beta * std::min(loss, mode.bonus_clip);
    }
    case ObjectiveMode::Kind::kPolyc: {
      double lie = lie_derivative(nlf, wm, env, x, u, g, nlf.k_mc, rng);
      return r + (lie < 0.0 ? mode.kappa : 0.0);
    }
  }
  return r;
}

// Flat transition batch for the update operations.
template <typename T>
struct AgentBatch {
  std::size_t size = 0;
  std::vector<std::vector<T>> x, g, u, xn;
  std::vector<double> r;
  std::vector<bool> done;
};

namespace detail {

template <typename T>
std::vector<T> stack_rows(const std::vector<std::vector<T>>& rows) {
  std::vector<T> flat;
  if (rows.empty()) return flat;
  flat.reserve(rows.size() * rows[0].size());
  for (const auto& r : rows) flat.insert(flat.end(), r.begin(), r.end());
  return flat;
}

}  // namespace detail

struct CriticLosses {
  double q1 = 0.0;
  double q2 = 0.0;
};

template <typename T>
struct CriticGrads {
  CriticLosses losses;
  ParamStore<T> g1, g2;
};

// Mean-squared-error losses and gradients of both critics against the
// entropy-regularized TD target
//   y = r~ + gamma * (1 - done) * (min(Q1', Q2')(x', g, u') - alpha log pi).
// Next actions are resampled; target networks receive no gradient.
template <typename T>
CriticGrads<T> critic_loss_and_grads(const Critics<T>& critics,
                                     const Policy<T>& policy,
                                     const Temperature<T>& temperature,
                                     const AgentBatch<T>& batch,
                                     const ObjectiveMode& mode,
                                     const Nlf<T>& nlf, const WorldModel<T>& wm,
                                     const Env& env, double gamma, Rng& rng,
                                     Rng& shaping_rng) {
  std::size_t b = batch.size;
  if (b == 0) throw UsageError("critic_update: empty batch");
  double alpha = static_cast<double>(temperature.alpha());
  // next-action heads, batched
  std::vector<std::vector<T>> pin(b);
  for (std::size_t i = 0; i < b; ++i)
    pin[i] = policy.input_for(std::span<const T>(batch.xn[i]),
                              std::span<const T>(batch.g[i]));
  auto pin_flat = detail::stack_rows(pin);
  auto heads = mlp_forward_batch<T>(policy.net, policy.spec, pin_flat, b);
  std::size_t hw = policy.spec.output_width();

  std::vector<double> targets(b);
  std::vector<std::vector<T>> qin_next(b);
  std::vector<double> logp_next(b);
  for (std::size_t i = 0; i < b; ++i) {
    std::vector<double> z(policy.action_dim);
    for (auto& v : z) v = rng.normal();
    auto ps = detail::squash_row(policy, heads.data() + i * hw, z);
    logp_next[i] = ps.log_prob;
    qin_next[i] = critics.input_for(std::span<const T>(batch.xn[i]),
                                    std::span<const T>(batch.g[i]),
                                    std::span<const T>(ps.action));
  }
  auto qin_next_flat = detail::stack_rows(qin_next);
  auto qt1 =
      mlp_forward_batch<T>(critics.q1_target, critics.spec, qin_next_flat, b);
  auto qt2 =
      mlp_forward_batch<T>(critics.q2_target, critics.spec, qin_next_flat, b);
  for (std::size_t i = 0; i < b; ++i) {
    double shaped = augmented_reward(mode, batch.r[i], batch.x[i], batch.u[i],
                                     batch.g[i], nlf, wm, env, shaping_rng);
    double qmin = std::min(static_cast<double>(qt1[i]),
                           static_cast<double>(qt2[i]));
    targets[i] = shaped + gamma * (batch.done[i] ? 0.0 : 1.0) *
                              (qmin - alpha * logp_next[i]);
  }

  std::vector<std::vector<T>> qin(b);
  for (std::size_t i = 0; i < b; ++i)
    qin[i] = critics.input_for(std::span<const T>(batch.x[i]),
                               std::span<const T>(batch.g[i]),
                               std::span<const T>(batch.u[i]));
  auto qin_flat = detail::stack_rows(qin);
  CriticGrads<T> out;
  auto grads_one = [&](const ParamStore<T>& q, double& loss_out) {
    MlpCache<T> cache;
    auto qv = mlp_forward_batch<T>(q, critics.spec, qin_flat, b, &cache);
    double loss = 0.0;
    std::vector<T> upstream(b);
    for (std::size_t i = 0; i < b; ++i) {
      double d = static_cast<double>(qv[i]) - targets[i];
      loss += d * d;
      upstream[i] = static_cast<T>(2.0 * d / static_cast<double>(b));
    }
    loss_out = loss / static_cast<double>(b);
    auto [grads, ig] = mlp_backward_batch<T>(q, critics.spec, cache, upstream);
    (void)ig;
    return std::move(grads);
  };
  out.g1 = grads_one(critics.q1, out.losses.q1);
  out.g2 = grads_one(critics.q2, out.losses.q2);
  return out;
}

// One Adam step on each critic toward the TD target above.
template <typename T>
CriticLosses critic_update(Critics<T>& critics, const Policy<T>& policy,
                           const Temperature<T>& temperature,
                           const AgentBatch<T>& batch,
                           const ObjectiveMode& mode, const Nlf<T>& nlf,
                           const WorldModel<T>& wm, const Env& env,
                           double gamma, Rng& rng, Rng& shaping_rng,
                           AdamState<T>& adam_q1, AdamState<T>& adam_q2) {
  auto cg = critic_loss_and_grads(critics, policy, temperature, batch, mode,
                                  nlf, wm, env, gamma, rng, shaping_rng);
  adam_step(adam_q1, critics.q1, cg.g1);
  adam_step(adam_q2, critics.q2, cg.g2);
  return cg.losses;
}

struct PolicyUpdateResult {
  double loss = 0.0;
  std::vector<double> log_probs;  // of the freshly sampled actions
};

// Loss and exact gradient of E[alpha log pi(u|x,g) - min(Q1,Q2)(x,g,u)]
// with reparameterized actions. Critic parameters are read-only; their
// input gradient provides dQ/du.
template <typename T>
std::pair<PolicyUpdateResult, ParamStore<T>> policy_loss_and_grads(
    const Policy<T>& policy, const Critics<T>& critics,
    const Temperature<T>& temperature, const AgentBatch<T>& batch, Rng& rng) {
  std::size_t b = batch.size;
  if (b == 0) throw UsageError("policy_update: empty batch");
  double alpha = static_cast<double>(temperature.alpha());
  std::size_t adim = policy.action_dim;
  std::size_t hw = policy.spec.output_width();

  std::vector<std::vector<T>> pin(b);
  for (std::size_t i = 0; i < b; ++i)
    pin[i] = policy.input_for(std::span<const T>(batch.x[i]),
                              std::span<const T>(batch.g[i]));
  auto pin_flat = detail::stack_rows(pin);
  MlpCache<T> pcache;
  auto heads =
      mlp_forward_batch<T>(policy.net, policy.spec, pin_flat, b, &pcache);

  std::vector<PolicySample<T>> samples(b);
  std::vector<std::vector<T>> qin(b);
  for (std::size_t i = 0; i < b; ++i) {
    std::vector<double> z(adim);
    for (auto& v : z) v = rng.normal();
    samples[i] = detail::squash_row(policy, heads.data() + i * hw, z);
    qin[i] = critics.input_for(std::span<const T>(batch.x[i]),
                               std::span<const T>(batch.g[i]),
                               std::span<const T>(samples[i].action));
  }
  auto qin_flat = detail::stack_rows(qin);
  MlpCache<T> c1, c2;
  auto q1v = mlp_forward_batch<T>(critics.q1, critics.spec, qin_flat, b, &c1);
  auto q2v = mlp_forward_batch<T>(critics.q2, critics.spec, qin_flat, b, &c2);

  double inv_b = 1.0 / static_cast<double>(b);
  double loss = 0.0;
  std::vector<T> up1(b, T(0)), up2(b, T(0));
  for (std::size_t i = 0; i < b; ++i) {
    double qmin;
    if (static_cast<double>(q1v[i]) <= static_cast<double>(q2v[i])) {
      qmin = static_cast<double>(q1v[i]);
      up1[i] = static_cast<T>(-inv_b);
    } else {
      qmin = static_cast<double>(q2v[i]);
      up2[i] = static_cast<T>(-inv_b);
    }
    loss += alpha * samples[i].log_prob - qmin;
  }
  loss *= inv_b;
  auto [g1, in_grad1] = mlp_backward_batch<T>(critics.q1, critics.spec, c1, up1);
  auto [g2, in_grad2] = mlp_backward_batch<T>(critics.q2, critics.spec, c2, up2);
  (void)g1;
  (void)g2;

  std::size_t qoff = critics.obs_dim + critics.goal_dim;
  std::size_t qw = critics.spec.input_width();
  std::vector<T> upstream(b * hw, T(0));
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t j = 0; j < adim; ++j) {
      double a = static_cast<double>(samples[i].pre_squash[j]);
      double z = static_cast<double>(samples[i].noise[j]);
      double raw_s = static_cast<double>(heads[i * hw + adim + j]);
      bool clamped = raw_s < static_cast<double>(Policy<T>::kLogStdMin) ||
                     raw_s > static_cast<double>(Policy<T>::kLogStdMax);
      double s = std::clamp(raw_s, static_cast<double>(Policy<T>::kLogStdMin),
                            static_cast<double>(Policy<T>::kLogStdMax));
      double std_ = std::exp(s);
      double tanh_a = std::tanh(a);
      double scale = static_cast<double>(policy.action_scale[j]);
      // dQ-term/du already carries -1/B via the critic upstream
      double dj_du = static_cast<double>(in_grad1[i * qw + qoff + j]) +
                     static_cast<double>(in_grad2[i * qw + qoff + j]);
      double dj_da = alpha * inv_b * 2.0 * tanh_a +
                     dj_du * scale * (1.0 - tanh_a * tanh_a);
      upstream[i * hw + j] = static_cast<T>(dj_da);
      if (!clamped)
        upstream[i * hw + adim + j] =
            static_cast<T>(dj_da * std_ * z - alpha * inv_b);
    }
  }
  auto [pgrads, pig] =
      mlp_backward_batch<T>(policy.net, policy.spec, pcache, upstream);
  (void)pig;
  PolicyUpdateResult result;
  result.loss = loss;
  result.log_probs.resize(b);
  for (std::size_t i = 0; i < b; ++i) result.log_probs[i] = samples[i].log_prob;
  return {std::move(result), std::move(pgrads)};
}

// One Adam step on the objective above.
template <typename T>
PolicyUpdateResult policy_update(Policy<T>& policy, const Critics<T>& critics,
                                 const Temperature<T>& temperature,
                                 const AgentBatch<T>& batch, Rng& rng,
                                 AdamState<T>& adam) {
  auto [result, grads] =
      policy_loss_and_grads(policy, critics, temperature, batch, rng);
  adam_step(adam, policy.net, grads);
  return result;
}

// One Adam step on log alpha minimizing E[-alpha (log pi + target entropy)].
template <typename T>
double temperature_update(Temperature<T>& temperature,
                          std::span<const double> log_probs,
                          AdamState<T>& adam) {
  double mean_term = 0.0;
  for (double lp : log_probs)
    mean_term += lp + static_cast<double>(temperature.target_entropy);
  if (!log_probs.empty()) mean_term /= static_cast<double>(log_probs.size());
  double alpha = static_cast<double>(temperature.alpha());
  double loss = -alpha * mean_term;
  ParamStore<T> grads = temperature.store.zeros_like();
  grads.entries[0].data[0] = static_cast<T>(-alpha * mean_term);
  adam_step(adam, temperature.store, grads);
  return loss;
}

}  // namespace sacla
