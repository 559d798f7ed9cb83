#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "sacla/param_store.hpp"
#include "sacla/rng.hpp"

namespace sacla {

enum class Activation { kTanh, kRelu };

// Fully connected network shape: first width is the input, last the output.
// The final layer emits raw pre-activations; consumers apply their own
// output transforms (|.|+c for Lyapunov values, tanh squashing for actions,
// exp for standard deviations).
struct MlpSpec {
  std::vector<std::size_t> widths;
  Activation hidden_activation = Activation::kTanh;

  void validate() const {
    if (widths.size() < 2)
      throw ConfigError("MlpSpec needs at least input and output widths");
    for (auto w : widths)
      if (w < 1) throw ConfigError("MlpSpec widths must be >= 1");
  }

  std::size_t input_width() const { return widths.front(); }
  std::size_t output_width() const { return widths.back(); }
  std::size_t layer_count() const { return widths.size() - 1; }

  std::size_t param_count() const {
    std::size_t n = 0;
    for (std::size_t l = 0; l + 1 < widths.size(); ++l)
      n += widths[l] * widths[l + 1] + widths[l + 1];
    return n;
  }
};

// Xavier-uniform weights, zero biases. Layer l uses its own derived stream so
// the draw for one layer does not depend on the sizes of earlier layers.
template <typename T>
ParamStore<T> mlp_init(const MlpSpec& spec, std::uint64_t seed) {
  spec.validate();
  ParamStore<T> params;
  Rng root(seed);
  for (std::size_t l = 0; l < spec.layer_count(); ++l) {
    std::size_t fan_in = spec.widths[l];
    std::size_t fan_out = spec.widths[l + 1];
    auto& w = params.add("W" + std::to_string(l), {fan_in, fan_out});
    params.add("b" + std::to_string(l), {fan_out});
    Rng layer = root.derive(l);
    double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    for (auto& x : w.data)
      x = static_cast<T>(layer.uniform(-limit, limit));
  }
  return params;
}

// Post-activations per layer, kept for the backward pass. acts[0] is the
// input batch; acts[L] holds the final-layer pre-activation output.
template <typename T>
struct MlpCache {
  std::size_t batch = 0;
  std::vector<std::vector<T>> acts;
};

namespace detail {

// C[B x N] += A[B x M] * W[M x N]
template <typename T>
void gemm_nn(const T* a, const T* w, T* c, std::size_t batch, std::size_t m,
             std::size_t n) {
  for (std::size_t b = 0; b < batch; ++b) {
    const T* arow = a + b * m;
    T* crow = c + b * n;
    for (std::size_t k = 0; k < m; ++k) {
      T av = arow[k];
      const T* wrow = w + k * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * wrow[j];
    }
  }
}

}  // namespace detail

// Batched forward pass over row-major input [batch x in]. Returns
// [batch x out] final-layer pre-activations.
template <typename T>
std::vector<T> mlp_forward_batch(const ParamStore<T>& params,
                                 const MlpSpec& spec, std::span<const T> input,
                                 std::size_t batch,
                                 MlpCache<T>* cache = nullptr) {
  if (input.size() != batch * spec.input_width())
    throw ShapeError("mlp_forward: input size " + std::to_string(input.size()) +
                     " != batch * input width");
  if (cache) {
    cache->batch = batch;
    cache->acts.assign(1, std::vector<T>(input.begin(), input.end()));
  }
  std::vector<T> cur(input.begin(), input.end());
  for (std::size_t l = 0; l < spec.layer_count(); ++l) {
    std::size_t m = spec.widths[l];
    std::size_t n = spec.widths[l + 1];
    const auto& w = params.at("W" + std::to_string(l)).data;
    const auto& bias = params.at("b" + std::to_string(l)).data;
    std::vector<T> next(batch * n);
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t j = 0; j < n; ++j) next[b * n + j] = bias[j];
    detail::gemm_nn(cur.data(), w.data(), next.data(), batch, m, n);
    bool last = (l + 1 == spec.layer_count());
    if (!last) {
      if (spec.hidden_activation == Activation::kTanh) {
        for (auto& x : next) x = std::tanh(x);
      } else {
        for (auto& x : next) x = x > T(0) ? x : T(0);
      }
    }
    if (cache) cache->acts.push_back(next);
    cur = std::move(next);
  }
  return cur;
}

template <typename T>
std::vector<T> mlp_forward(const ParamStore<T>& params, const MlpSpec& spec,
                           std::span<const T> input,
                           MlpCache<T>* cache = nullptr) {
  return mlp_forward_batch(params, spec, input, 1, cache);
}

// Exact reverse-mode gradients of <upstream, output> summed over the batch.
// Returns parameter gradients (congruent to params) and the input gradient
// [batch x in].
template <typename T>
std::pair<ParamStore<T>, std::vector<T>> mlp_backward_batch(
    const ParamStore<T>& params, const MlpSpec& spec, const MlpCache<T>& cache,
    std::span<const T> upstream) {
  std::size_t batch = cache.batch;
  if (upstream.size() != batch * spec.output_width())
    throw ShapeError("mlp_backward: upstream size mismatch");
  ParamStore<T> grads = params.zeros_like();
  std::vector<T> delta(upstream.begin(), upstream.end());
  for (std::size_t l = spec.layer_count(); l-- > 0;) {
    std::size_t m = spec.widths[l];
    std::size_t n = spec.widths[l + 1];
    const auto& w = params.at("W" + std::to_string(l)).data;
    auto& gw = grads.at("W" + std::to_string(l)).data;
    auto& gb = grads.at("b" + std::to_string(l)).data;
    const auto& a_prev = cache.acts[l];
    // gw += a_prev^T * delta; gb += column sums of delta
    for (std::size_t b = 0; b < batch; ++b) {
      const T* drow = delta.data() + b * n;
      for (std::size_t j = 0; j < n; ++j) gb[j] += drow[j];
      const T* arow = a_prev.data() + b * m;
      for (std::size_t k = 0; k < m; ++k) {
        T av = arow[k];
        T* grow = gw.data() + k * n;
        for (std::size_t j = 0; j < n; ++j) grow[j] += av * drow[j];
      }
    }
    // delta_prev = delta * W^T, then through the activation derivative
    std::vector<T> delta_prev(batch * m, T(0));
    for (std::size_t b = 0; b < batch; ++b) {
      const T* drow = delta.data() + b * n;
      T* prow = delta_prev.data() + b * m;
      for (std::size_t k = 0; k < m; ++k) {
        const T* wrow = w.data() + k * n;
        T s = T(0);
        for (std::size_t j = 0; j < n; ++j) s += drow[j] * wrow[j];
        prow[k] = s;
      }
    }
    if (l > 0) {
      // a_prev is the post-activation output of layer l-1
      if (spec.hidden_activation == Activation::kTanh) {
        for (std::size_t i = 0; i < delta_prev.size(); ++i) {
          T t = a_prev[i];
          delta_prev[i] *= (T(1) - t * t);
        }
      } else {
        for (std::size_t i = 0; i < delta_prev.size(); ++i)
          delta_prev[i] *= a_prev[i] > T(0) ? T(1) : T(0);
      }
    }
    delta = std::move(delta_prev);
  }
  return {std::move(grads), std::move(delta)};
}

template <typename T>
std::pair<ParamStore<T>, std::vector<T>> mlp_backward(
    const ParamStore<T>& params, const MlpSpec& spec, const MlpCache<T>& cache,
    std::span<const T> upstream) {
  return mlp_backward_batch(params, spec, cache, upstream);
}

}  // namespace sacla
