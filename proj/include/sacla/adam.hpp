#pragma once

#include <cmath>
#include <cstdint>

#include "sacla/param_store.hpp"

namespace sacla {

// Adam with bias correction. m and v are stored as ParamStores congruent to
// the parameters they track.
template <typename T>
struct AdamState {
  ParamStore<T> m;
  ParamStore<T> v;
  std::uint64_t step_count = 0;
  T lr = T(3e-4);
  T beta1 = T(0.9);
  T beta2 = T(0.999);
  T eps = T(1e-8);

  static AdamState for_params(const ParamStore<T>& params, T lr) {
    AdamState s;
    s.m = params.zeros_like();
    s.v = params.zeros_like();
    s.lr = lr;
    return s;
  }
};

template <typename T>
void adam_step(AdamState<T>& state, ParamStore<T>& params,
               const ParamStore<T>& grads) {
  if (!params.congruent(grads) || !params.congruent(state.m))
    throw ShapeError("adam_step: stores not congruent");
  for (const auto& e : grads.entries)
    for (T g : e.data)
      if (!std::isfinite(static_cast<double>(g)))
        throw NumericError("adam_step: non-finite gradient in " + e.name);
  state.step_count += 1;
  double t = static_cast<double>(state.step_count);
  double bc1 = 1.0 - std::pow(static_cast<double>(state.beta1), t);
  double bc2 = 1.0 - std::pow(static_cast<double>(state.beta2), t);
  for (std::size_t e = 0; e < params.entries.size(); ++e) {
    auto& p = params.entries[e].data;
    const auto& g = grads.entries[e].data;
    auto& m = state.m.entries[e].data;
    auto& v = state.v.entries[e].data;
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = state.beta1 * m[i] + (T(1) - state.beta1) * g[i];
      v[i] = state.beta2 * v[i] + (T(1) - state.beta2) * g[i] * g[i];
      T mhat = static_cast<T>(m[i] / bc1);
      T vhat = static_cast<T>(v[i] / bc2);
      p[i] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
    }
  }
  ++params.version;
}

}  // namespace sacla
