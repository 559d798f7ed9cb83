#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "sacla/adam.hpp"
#include "sacla/env.hpp"
#include "sacla/mlp.hpp"
#include "sacla/rng.hpp"
#include "sacla/world_model.hpp"

namespace sacla {

// Neural Lyapunov function V(x, g) = |net(features(x, g))| + c_min.
// Positivity is architectural; V(g, g) = |net(0)| + c_min is the same value
// for every goal because features are goal-relative.
template <typename T>
struct Nlf {
  MlpSpec spec;  // feature_dim -> 1
  ParamStore<T> net;
  T c_min = T(1e-3);
  int k_mc = 4;  // Monte-Carlo samples for Lie derivative during training

  static Nlf make(std::size_t feature_dim,
                  const std::vector<std::size_t>& hidden, std::uint64_t seed) {
    Nlf nlf;
    nlf.spec.widths.push_back(feature_dim);
    for (auto h : hidden) nlf.spec.widths.push_back(h);
    nlf.spec.widths.push_back(1);
    nlf.net = mlp_init<T>(nlf.spec, seed);
    return nlf;
  }
};

template <typename T>
T v_value_features(const Nlf<T>& nlf, std::span<const T> features) {
  for (T v : features)
    if (!std::isfinite(static_cast<double>(v)))
      throw NumericError("v_value: non-finite input");
  auto y = mlp_forward<T>(nlf.net, nlf.spec, features);
  return std::abs(y[0]) + nlf.c_min;
}

template <typename T>
T v_value(const Nlf<T>& nlf, const Env& env, const std::vector<T>& obs,
          const std::vector<T>& goal) {
  auto f = env.features<T>(obs, goal);
  return v_value_features(nlf, std::span<const T>(f));
}

template <typename T>
T v_at_goal(const Nlf<T>& nlf) {
  std::vector<T> zero(nlf.spec.input_width(), T(0));
  return v_value_features(nlf, std::span<const T>(zero));
}

// Monte-Carlo estimate of the world-model Lie derivative
//   (1/K) sum_k V(x_k~, g) - V(x, g),  x~ ~ wm(x, u).
// K = 0 selects mean mode: V(mu, g) - V(x, g).
template <typename T>
double lie_derivative(const Nlf<T>& nlf, const WorldModel<T>& wm,
                      const Env& env, const std::vector<T>& x,
                      const std::vector<T>& u, const std::vector<T>& g, int K,
                      Rng& rng) {
  auto pred = wm_predict(wm, std::span<const T>(x), std::span<const T>(u));
  double vx = static_cast<double>(v_value(nlf, env, x, g));
  if (K <= 0)
    return static_cast<double>(v_value(nlf, env, pred.mean, g)) - vx;
  auto samples = wm_sample(pred, rng, static_cast<std::size_t>(K));
  double acc = 0.0;
  for (const auto& xs : samples)
    acc += static_cast<double>(v_value(nlf, env, xs, g));
  return acc / static_cast<double>(K) - vx;
}

// Per-state Lyapunov violation: max(0, Lie) + V(g, g)^2. Uses nlf.k_mc
// Monte-Carlo samples.
template <typename T>
double lyapunov_point_loss(const Nlf<T>& nlf, const WorldModel<T>& wm,
                           const Env& env, const std::vector<T>& x,
                           const std::vector<T>& u, const std::vector<T>& g,
                           Rng& rng) {
  double lie = lie_derivative(nlf, wm, env, x, u, g, nlf.k_mc, rng);
  double vg = static_cast<double>(v_at_goal(nlf));
  return std::max(0.0, lie) + vg * vg;
}

template <typename T>
struct NlfBatch {
  std::vector<std::vector<T>> x;
  std::vector<std::vector<T>> g;
};

template <typename T>
using ActionSampler = std::function<std::vector<T>(
    const std::vector<T>& x, const std::vector<T>& g, Rng&)>;

// Batch-mean violation and its exact gradient over a replay batch of
// states. Actions are resampled from the current policy, next states come
// from the world model. The hinge realizes the indicator of the risk
// gradient:
// contributions from V at sampled next states flow only where the
// Monte-Carlo Lie estimate is positive; V(g) is penalized quadratically
// everywhere. No gradient reaches the world model or the policy.
template <typename T>
std::pair<double, ParamStore<T>> nlf_loss_and_grads(
    const Nlf<T>& nlf, const WorldModel<T>& wm, const Env& env,
    const ActionSampler<T>& sample_action, const NlfBatch<T>& batch,
    Rng& rng) {
  std::size_t b = batch.x.size();
  if (b == 0) throw UsageError("nlf_update: empty batch");
  int K = std::max(1, nlf.k_mc);
  std::size_t fd = nlf.spec.input_width();
  // Stack every V evaluation into one forward batch:
  // rows [0, b*K): sampled next states; rows [b*K, b*K+b): current states;
  // final row: zero features (the goal).
  std::size_t rows = b * static_cast<std::size_t>(K) + b + 1;
  std::vector<T> inputs(rows * fd, T(0));
  for (std::size_t i = 0; i < b; ++i) {
    auto u = sample_action(batch.x[i], batch.g[i], rng);
    auto pred = wm_predict(wm, std::span<const T>(batch.x[i]),
                           std::span<const T>(u));
    auto samples = wm_sample(pred, rng, static_cast<std::size_t>(K));
    for (int k = 0; k < K; ++k) {
      auto f = env.features<T>(samples[k], batch.g[i]);
      std::copy(f.begin(), f.end(),
                inputs.begin() + (i * K + k) * fd);
    }
    auto fx = env.features<T>(batch.x[i], batch.g[i]);
    std::copy(fx.begin(), fx.end(), inputs.begin() + (b * K + i) * fd);
  }
  MlpCache<T> cache;
  auto y = mlp_forward_batch<T>(nlf.net, nlf.spec, inputs, rows, &cache);
  auto vof = [&](std::size_t row) {
    return std::abs(static_cast<double>(y[row])) +
           static_cast<double>(nlf.c_min);
  };
  double vg = vof(rows - 1);
  std::vector<T> upstream(rows, T(0));
  double total_loss = 0.0;
  double inv_b = 1.0 / static_cast<double>(b);
  double inv_bk = inv_b / static_cast<double>(K);
  auto sgn = [](T v) { return v > T(0) ? 1.0 : (v < T(0) ? -1.0 : 0.0); };
  for (std::size_t i = 0; i < b; ++i) {
    double mean_v = 0.0;
    for (int k = 0; k < K; ++k) mean_v += vof(i * K + k);
    mean_v /= static_cast<double>(K);
    double lie = mean_v - vof(b * K + i);
    total_loss += std::max(0.0, lie) + vg * vg;
    if (lie > 0.0) {
      for (int k = 0; k < K; ++k)
        upstream[i * K + k] = static_cast<T>(sgn(y[i * K + k]) * inv_bk);
      upstream[b * K + i] = static_cast<T>(-sgn(y[b * K + i]) * inv_b);
    }
  }
  upstream[rows - 1] = static_cast<T>(2.0 * vg * sgn(y[rows - 1]));
  auto [grads, input_grad] =
      mlp_backward_batch<T>(nlf.net, nlf.spec, cache, upstream);
  (void)input_grad;
  return {total_loss * inv_b, std::move(grads)};
}

template <typename T>
double nlf_update(Nlf<T>& nlf, const WorldModel<T>& wm, const Env& env,
                  const ActionSampler<T>& sample_action,
                  const NlfBatch<T>& batch, Rng& rng, AdamState<T>& adam) {
  auto [loss, grads] =
      nlf_loss_and_grads(nlf, wm, env, sample_action, batch, rng);
  adam_step(adam, nlf.net, grads);
  return loss;
}

}  // namespace sacla
