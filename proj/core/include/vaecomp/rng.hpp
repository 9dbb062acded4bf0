// Counter-based random streams: every draw is a pure function of its key,
// so determinism survives reordering and batch-size changes.
#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numbers>
#include <string_view>

namespace vaecomp {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

inline std::uint64_t hash_key(std::initializer_list<std::uint64_t> words) {
  std::uint64_t h = 0x243f6a8885a308d3ull;
  for (std::uint64_t w : words) h = splitmix64(h ^ w);
  return h;
}

inline std::uint64_t hash_str(std::string_view s, std::uint64_t seed = 0) {
  std::uint64_t h = splitmix64(seed ^ 0x452821e638d01377ull);
  for (char c : s) h = splitmix64(h ^ static_cast<std::uint64_t>(static_cast<unsigned char>(c)));
  return h;
}

// Uniform in (0, 1].
inline double key_uniform(std::initializer_list<std::uint64_t> words) {
  const std::uint64_t h = hash_key(words);
  return (static_cast<double>(h >> 11) + 1.0) * 0x1.0p-53;
}

// Standard normal via Box-Muller on two derived uniforms.
inline double key_gaussian(std::initializer_list<std::uint64_t> words) {
  const std::uint64_t h = hash_key(words);
  const double u1 = (static_cast<double>(splitmix64(h ^ 1) >> 11) + 1.0) * 0x1.0p-53;
  const double u2 = (static_cast<double>(splitmix64(h ^ 2) >> 11) + 1.0) * 0x1.0p-53;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

}  // namespace vaecomp
