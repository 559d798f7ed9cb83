#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "sacla/param_store.hpp"

namespace sacla {

// On-disk snapshot. The entry section is a flat list of named float32
// arrays (parameters, optimizer moments, normalizer statistics, buffer
// contents); the manifest section carries named u64 integers (rng states,
// counters, config hash) that cannot survive a float round trip.
//
// Layout, all little-endian:
//   "SACL" | u16 version | u32 entry count
//   per entry: u32 name length | name bytes | u32 rank | u32 dims[rank]
//              | f32 payload
//   "MANI" | u32 count | per item: u32 name length | name bytes | u64 value
struct Checkpoint {
  static constexpr std::uint16_t kFormatVersion = 1;

  ParamStore<float> arrays;
  std::vector<std::pair<std::string, std::uint64_t>> manifest;

  std::uint64_t manifest_at(std::string_view name) const {
    for (const auto& [k, v] : manifest)
      if (k == name) return v;
    throw FormatError("checkpoint manifest missing: " + std::string(name));
  }
  bool manifest_has(std::string_view name) const {
    for (const auto& [k, v] : manifest)
      if (k == name) return true;
    return false;
  }
};

namespace detail {

inline void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
}
inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_f32(std::string& out, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(out, bits);
}

struct Reader {
  const unsigned char* p;
  std::size_t remaining;

  void need(std::size_t n) const {
    if (remaining < n) throw FormatError("checkpoint truncated");
  }
  std::uint16_t u16() {
    need(2);
    std::uint16_t v = static_cast<std::uint16_t>(p[0] | (p[1] << 8));
    p += 2; remaining -= 2;
    return v;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
    p += 4; remaining -= 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    p += 8; remaining -= 8;
    return v;
  }
  float f32() {
    std::uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(p), n);
    p += n; remaining -= n;
    return s;
  }
};

}  // namespace detail

inline std::string checkpoint_serialize(const Checkpoint& ck) {
  std::string out;
  out += "SACL";
  detail::put_u16(out, Checkpoint::kFormatVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(ck.arrays.entries.size()));
  for (const auto& e : ck.arrays.entries) {
    detail::put_u32(out, static_cast<std::uint32_t>(e.name.size()));
    out += e.name;
    detail::put_u32(out, static_cast<std::uint32_t>(e.shape.size()));
    for (auto d : e.shape) detail::put_u32(out, static_cast<std::uint32_t>(d));
    for (float v : e.data) detail::put_f32(out, v);
  }
  out += "MANI";
  detail::put_u32(out, static_cast<std::uint32_t>(ck.manifest.size()));
  for (const auto& [name, value] : ck.manifest) {
    detail::put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    detail::put_u64(out, value);
  }
  return out;
}

inline Checkpoint checkpoint_parse(std::string_view bytes) {
  detail::Reader r{reinterpret_cast<const unsigned char*>(bytes.data()),
                   bytes.size()};
  if (r.str(4) != "SACL") throw FormatError("bad checkpoint magic");
  std::uint16_t version = r.u16();
  if (version != Checkpoint::kFormatVersion)
    throw FormatError("unsupported checkpoint version " +
                      std::to_string(version));
  Checkpoint ck;
  std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.str(r.u32());
    std::uint32_t rank = r.u32();
    std::vector<std::size_t> shape(rank);
    std::size_t total = 1;
    for (auto& d : shape) {
      d = r.u32();
      total *= d;
    }
    auto& e = ck.arrays.add(std::move(name), std::move(shape));
    for (std::size_t j = 0; j < total; ++j) e.data[j] = r.f32();
  }
  if (r.str(4) != "MANI") throw FormatError("missing checkpoint manifest");
  std::uint32_t mcount = r.u32();
  for (std::uint32_t i = 0; i < mcount; ++i) {
    std::string name = r.str(r.u32());
    std::uint64_t value = r.u64();
    ck.manifest.emplace_back(std::move(name), value);
  }
  return ck;
}

inline void checkpoint_save(const std::string& path, const Checkpoint& ck) {
  std::string bytes = checkpoint_serialize(ck);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open checkpoint for writing: " + path);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("checkpoint write failed: " + path);
}

inline Checkpoint checkpoint_load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint: " + path);
  std::string bytes((std::istreambuf_iterator<char>(f)),
                    std::istreambuf_iterator<char>());
  return checkpoint_parse(bytes);
}

}  // namespace sacla
