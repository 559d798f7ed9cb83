#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "sacla/adam.hpp"
#include "sacla/mlp.hpp"
#include "sacla/param_store.hpp"
#include "sacla/rng.hpp"

namespace sacla {

inline constexpr double kLog2Pi = 1.8378770664093454835606594728112;

// Diagonal Gaussian over the next state.
template <typename T>
struct GaussianPrediction {
  std::vector<T> mean;
  std::vector<T> std;
};

// Per-dimension running mean/variance (Welford). Scalar type matches the
// learner so checkpointed statistics round-trip exactly.
template <typename T>
struct RunningStat {
  std::vector<T> mean;
  std::vector<T> m2;
  T count = T(0);

  explicit RunningStat(std::size_t dim = 0) : mean(dim, T(0)), m2(dim, T(0)) {}

  void update(std::span<const T> x) {
    count += T(1);
    for (std::size_t i = 0; i < mean.size(); ++i) {
      T delta = x[i] - mean[i];
      mean[i] += delta / count;
      m2[i] += delta * (x[i] - mean[i]);
    }
  }

  T offset(std::size_t i) const { return count < T(1) ? T(0) : mean[i]; }
  T scale(std::size_t i) const {
    if (count < T(2)) return T(1);
    T var = m2[i] / count;
    T s = std::sqrt(std::max(var, T(0)));
    return std::max(s, T(1e-6));
  }
};

// One-step probabilistic dynamics model. The network maps the normalized
// (state, action) pair to a per-dimension residual mean and log-std; the
// predicted mean is the current state plus the rescaled residual, so an
// all-zero network predicts no motion.
template <typename T>
struct WorldModel {
  static constexpr T kLogStdMin = T(-5);
  static constexpr T kLogStdMax = T(2);

  MlpSpec spec;  // input state_dim + action_dim, output 2 * state_dim
  ParamStore<T> net;
  RunningStat<T> input_stat;
  RunningStat<T> residual_stat;
  std::size_t state_dim = 0;
  std::size_t action_dim = 0;

  static WorldModel make(std::size_t state_dim, std::size_t action_dim,
                         const std::vector<std::size_t>& hidden,
                         std::uint64_t seed) {
    WorldModel wm;
    wm.state_dim = state_dim;
    wm.action_dim = action_dim;
    wm.spec.widths.push_back(state_dim + action_dim);
    for (auto h : hidden) wm.spec.widths.push_back(h);
    wm.spec.widths.push_back(2 * state_dim);
    wm.net = mlp_init<T>(wm.spec, seed);
    wm.input_stat = RunningStat<T>(state_dim + action_dim);
    wm.residual_stat = RunningStat<T>(state_dim);
    return wm;
  }

  std::vector<T> normalized_input(std::span<const T> x,
                                  std::span<const T> u) const {
    std::vector<T> in(state_dim + action_dim);
    for (std::size_t i = 0; i < state_dim; ++i) in[i] = x[i];
    for (std::size_t i = 0; i < action_dim; ++i) in[state_dim + i] = u[i];
    for (std::size_t i = 0; i < in.size(); ++i)
      in[i] = (in[i] - input_stat.offset(i)) / input_stat.scale(i);
    return in;
  }
};

template <typename T>
GaussianPrediction<T> wm_predict(const WorldModel<T>& wm, std::span<const T> x,
                                 std::span<const T> u) {
  if (x.size() != wm.state_dim || u.size() != wm.action_dim)
    throw ShapeError("wm_predict: input shape mismatch");
  for (T v : x)
    if (!std::isfinite(static_cast<double>(v)))
      throw NumericError("wm_predict: non-finite state");
  for (T v : u)
    if (!std::isfinite(static_cast<double>(v)))
      throw NumericError("wm_predict: non-finite action");
  auto in = wm.normalized_input(x, u);
  auto out = mlp_forward<T>(wm.net, wm.spec, in);
  GaussianPrediction<T> pred;
  pred.mean.resize(wm.state_dim);
  pred.std.resize(wm.state_dim);
  for (std::size_t i = 0; i < wm.state_dim; ++i) {
    pred.mean[i] = x[i] + out[i] * wm.residual_stat.scale(i);
    T s = std::clamp(out[wm.state_dim + i], WorldModel<T>::kLogStdMin,
                     WorldModel<T>::kLogStdMax);
    pred.std[i] = std::exp(s);
  }
  return pred;
}

// i.i.d. draws mu + sigma .* z, z standard normal.
template <typename T>
std::vector<std::vector<T>> wm_sample(const GaussianPrediction<T>& pred,
                                      Rng& rng, std::size_t n) {
  std::vector<std::vector<T>> out;
  out.reserve(n);
  for (std::size_t k = 0; k < n; ++k) {
    std::vector<T> x(pred.mean.size());
    for (std::size_t i = 0; i < x.size(); ++i)
      x[i] = pred.mean[i] +
             pred.std[i] * static_cast<T>(rng.normal());
    out.push_back(std::move(x));
  }
  return out;
}

// log of the product of univariate normal densities; the density itself is
// exp of it.
template <typename T>
double wm_log_density(const GaussianPrediction<T>& pred,
                      std::span<const T> next) {
  if (next.size() != pred.mean.size())
    throw ShapeError("wm_density: shape mismatch");
  double lp = 0.0;
  for (std::size_t i = 0; i < next.size(); ++i) {
    double sigma = static_cast<double>(pred.std[i]);
    double d = static_cast<double>(next[i]) - static_cast<double>(pred.mean[i]);
    lp += -0.5 * kLog2Pi - std::log(sigma) - d * d / (2.0 * sigma * sigma);
  }
  return lp;
}

template <typename T>
std::pair<double, double> wm_density(const GaussianPrediction<T>& pred,
                                     std::span<const T> next) {
  double lp = wm_log_density(pred, next);
  return {std::exp(lp), lp};
}

// Training batch: flat arrays [n x dim].
template <typename T>
struct WmBatch {
  std::vector<T> x;
  std::vector<T> u;
  std::vector<T> next;
  std::size_t size = 0;
};

// Mean NLL over the batch, with exact gradients through both heads. The
// (n/2) log 2pi constant is included so exp(-per-sample NLL) equals the
// predictive density.
template <typename T>
std::pair<double, ParamStore<T>> wm_nll(const WorldModel<T>& wm,
                                        const WmBatch<T>& batch) {
  if (batch.size == 0) throw UsageError("wm_nll: empty batch");
  std::size_t n = wm.state_dim;
  std::size_t b = batch.size;
  std::vector<T> inputs(b * (n + wm.action_dim));
  for (std::size_t r = 0; r < b; ++r) {
    auto in = wm.normalized_input(
        std::span<const T>(batch.x.data() + r * n, n),
        std::span<const T>(batch.u.data() + r * wm.action_dim, wm.action_dim));
    std::copy(in.begin(), in.end(), inputs.begin() + r * in.size());
  }
  MlpCache<T> cache;
  auto out = mlp_forward_batch<T>(wm.net, wm.spec, inputs, b, &cache);
  double loss = 0.0;
  std::vector<T> upstream(b * 2 * n, T(0));
  for (std::size_t r = 0; r < b; ++r) {
    for (std::size_t i = 0; i < n; ++i) {
      T res_scale = wm.residual_stat.scale(i);
      T mu = batch.x[r * n + i] + out[r * 2 * n + i] * res_scale;
      T raw_s = out[r * 2 * n + n + i];
      bool clamped = raw_s < WorldModel<T>::kLogStdMin ||
                     raw_s > WorldModel<T>::kLogStdMax;
      T s = std::clamp(raw_s, WorldModel<T>::kLogStdMin,
                       WorldModel<T>::kLogStdMax);
      double sigma = std::exp(static_cast<double>(s));
      double d = static_cast<double>(mu) -
                 static_cast<double>(batch.next[r * n + i]);
      loss += d * d / (2.0 * sigma * sigma) + static_cast<double>(s) +
              0.5 * kLog2Pi;
      double inv_b = 1.0 / static_cast<double>(b);
      // d/dmu = (mu - x') / sigma^2, chained through the residual scale
      upstream[r * 2 * n + i] =
          static_cast<T>(d / (sigma * sigma) * res_scale * inv_b);
      // d/ds = 1 - (mu - x')^2 / sigma^2, zero where the clamp is active
      upstream[r * 2 * n + n + i] =
          clamped ? T(0)
                  : static_cast<T>((1.0 - d * d / (sigma * sigma)) * inv_b);
    }
  }
  loss /= static_cast<double>(b);
  if (!std::isfinite(loss)) throw NumericError("wm_nll: non-finite loss");
  auto [grads, input_grad] =
      mlp_backward_batch<T>(wm.net, wm.spec, cache, upstream);
  (void)input_grad;
  return {loss, std::move(grads)};
}

// One training step: fold the batch into the running statistics, then take
// an Adam step on the NLL computed with the now-frozen statistics.
template <typename T>
double wm_train_step(WorldModel<T>& wm, AdamState<T>& adam,
                     const WmBatch<T>& batch) {
  std::size_t n = wm.state_dim;
  std::vector<T> in(n + wm.action_dim);
  std::vector<T> res(n);
  for (std::size_t r = 0; r < batch.size; ++r) {
    for (std::size_t i = 0; i < n; ++i) in[i] = batch.x[r * n + i];
    for (std::size_t i = 0; i < wm.action_dim; ++i)
      in[n + i] = batch.u[r * wm.action_dim + i];
    wm.input_stat.update(in);
    for (std::size_t i = 0; i < n; ++i)
      res[i] = batch.next[r * n + i] - batch.x[r * n + i];
    wm.residual_stat.update(res);
  }
  auto [loss, grads] = wm_nll(wm, batch);
  adam_step(adam, wm.net, grads);
  return loss;
}

}  // namespace sacla
