#pragma once

#include <cstdint>
#include <cstring>
#include <string_view>
#include <vector>

namespace lmfp {

// Deterministic hashing and random draws. Everything that feeds a file or a
// report goes through these instead of std::hash / <random>, whose outputs
// differ between standard library implementations.

constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Seeded FNV-1a over bytes, finalized with splitmix64.
inline std::uint64_t hash_bytes(std::string_view bytes, std::uint64_t seed = 0) {
  std::uint64_t h = 0xcbf29ce484222325ULL ^ splitmix64(seed);
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return splitmix64(h);
}

inline std::uint64_t hash_mix(std::uint64_t a, std::uint64_t b) {
  return splitmix64(a ^ (b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2)));
}

inline std::uint64_t hash_u64(std::uint64_t seed, std::string_view tag) {
  return hash_mix(seed, hash_bytes(tag));
}

inline std::uint64_t hash_u64(std::uint64_t seed, std::string_view tag, std::uint64_t extra) {
  return hash_mix(hash_u64(seed, tag), splitmix64(extra));
}

inline std::uint64_t hash_u64(std::uint64_t seed, std::string_view tag, std::string_view extra) {
  return hash_mix(hash_u64(seed, tag), hash_bytes(extra));
}

// Map a 64-bit hash onto [0,1) with full 53-bit resolution.
inline double unit_double(std::uint64_t h) {
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

// Counter-based PRNG: stream i of seed s is splitmix64(s + i). Stateless
// enough to reproduce bit-for-bit on any platform.
class DetRng {
 public:
  explicit DetRng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() { return splitmix64(state_++); }

  double next_unit() { return unit_double(next_u64()); }

  // Unbiased-enough bounded draw (fixed-point multiply). n must be > 0.
  std::uint64_t next_below(std::uint64_t n) {
    return static_cast<std::uint64_t>((static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  DetRng fork(std::string_view label) const { return DetRng(hash_u64(state_, label)); }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(next_below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::uint64_t state_;
};

inline std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = digits[v & 0xf];
    v >>= 4;
  }
  return out;
}

}  // namespace lmfp
