#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace sacla {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Ordered collection of named, shaped flat arrays. Houses every learnable
// parameter set in the system (Lyapunov net, world model, policy, critics,
// temperature) as well as optimizer moments.
template <typename T>
struct ParamStore {
  struct Entry {
    std::string name;
    std::vector<std::size_t> shape;
    std::vector<T> data;

    std::size_t size() const { return data.size(); }
  };

  std::vector<Entry> entries;
  std::uint64_t version = 0;

  Entry& add(std::string name, std::vector<std::size_t> shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    for (const auto& e : entries)
      if (e.name == name) throw ConfigError("duplicate entry name: " + name);
    entries.push_back(Entry{std::move(name), std::move(shape),
                            std::vector<T>(n, T(0))});
    return entries.back();
  }

  Entry& at(std::string_view name) {
    for (auto& e : entries)
      if (e.name == name) return e;
    throw ConfigError("no such entry: " + std::string(name));
  }
  const Entry& at(std::string_view name) const {
    for (const auto& e : entries)
      if (e.name == name) return e;
    throw ConfigError("no such entry: " + std::string(name));
  }

  std::size_t total_size() const {
    std::size_t n = 0;
    for (const auto& e : entries) n += e.size();
    return n;
  }

  bool congruent(const ParamStore& other) const {
    if (entries.size() != other.entries.size()) return false;
    for (std::size_t i = 0; i < entries.size(); ++i)
      if (entries[i].name != other.entries[i].name ||
          entries[i].shape != other.entries[i].shape)
        return false;
    return true;
  }

  // Zero-filled store with the same names and shapes.
  ParamStore zeros_like() const {
    ParamStore g;
    for (const auto& e : entries)
      g.entries.push_back(Entry{e.name, e.shape, std::vector<T>(e.size(), T(0))});
    return g;
  }

  void fill(T value) {
    for (auto& e : entries)
      for (auto& x : e.data) x = value;
  }

  template <typename U>
  ParamStore<U> cast() const {
    ParamStore<U> out;
    for (const auto& e : entries) {
      auto& ne = out.add(e.name, e.shape);
      for (std::size_t i = 0; i < e.size(); ++i)
        ne.data[i] = static_cast<U>(e.data[i]);
    }
    return out;
  }
};

// target <- tau * online + (1 - tau) * target, elementwise.
template <typename T>
void polyak_update(ParamStore<T>& target, const ParamStore<T>& online, T tau) {
  if (!(tau >= T(0) && tau <= T(1)))
    throw ConfigError("polyak tau must lie in [0,1]");
  if (!target.congruent(online))
    throw ShapeError("polyak_update: stores not congruent");
  for (std::size_t e = 0; e < target.entries.size(); ++e) {
    auto& t = target.entries[e].data;
    const auto& o = online.entries[e].data;
    for (std::size_t i = 0; i < t.size(); ++i)
      t[i] = tau * o[i] + (T(1) - tau) * t[i];
  }
  ++target.version;
}

}  // namespace sacla
