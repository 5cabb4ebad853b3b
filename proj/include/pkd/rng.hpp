#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace pkd {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Seed for one randomness consumer ("init", "shuffle", "noise", ...) and a
/// counter within it. Every stochastic choice in the toolkit flows from a
/// master seed through this function.
inline std::uint64_t derive_seed(std::uint64_t master, std::string_view consumer,
                                 std::uint64_t counter = 0) {
  std::uint64_t h = 1469598103934665603ULL;
  for (char c : consumer) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ULL;
  }
  return splitmix64(splitmix64(master ^ h) + counter);
}

inline Rng make_rng(std::uint64_t master, std::string_view consumer, std::uint64_t counter = 0) {
  return Rng(derive_seed(master, consumer, counter));
}

}  // namespace pkd
