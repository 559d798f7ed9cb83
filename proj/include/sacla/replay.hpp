#pragma once

#include <cstddef>
#include <vector>

#include "sacla/param_store.hpp"
#include "sacla/rng.hpp"

namespace sacla {

// One environment step. r is always the RAW environment reward; objective
// shaping is recomputed at update time with the current Lyapunov function
// and world model.
template <typename T>
struct Transition {
  std::vector<T> x, g, u, next;
  T r = T(0);
  bool done = false;
};

// Uniform ring buffer.
template <typename T>
struct ReplayBuffer {
  std::size_t capacity = 1'000'000;
  std::vector<Transition<T>> storage;
  std::size_t cursor = 0;

  explicit ReplayBuffer(std::size_t cap = 1'000'000) : capacity(cap) {
    storage.reserve(std::min<std::size_t>(cap, 4096));
  }

  std::size_t size() const { return storage.size(); }

  void push(Transition<T> t) {
    if (storage.size() < capacity) {
      storage.push_back(std::move(t));
    } else {
      storage[cursor] = std::move(t);
    }
    cursor = (cursor + 1) % capacity;
  }

  const Transition<T>& sample_one(Rng& rng) const {
    if (storage.empty()) throw UsageError("sample from empty replay buffer");
    return storage[rng.next_below(storage.size())];
  }

  std::vector<const Transition<T>*> sample(Rng& rng, std::size_t n) const {
    if (storage.empty()) throw UsageError("sample from empty replay buffer");
    std::vector<const Transition<T>*> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i)
      out.push_back(&storage[rng.next_below(storage.size())]);
    return out;
  }
};

}  // namespace sacla
