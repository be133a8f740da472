#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace noisebal {

using Engine = std::mt19937_64;

/// splitmix64 finaliser; used to derive independent substreams from one seed.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t hash_tag(std::string_view tag) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (char c : tag) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Seed for the substream named `tag` (optionally indexed) under `seed`.
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag,
                                    std::uint64_t index = 0) noexcept {
  return mix64(mix64(seed ^ hash_tag(tag)) + index);
}

inline Engine make_engine(std::uint64_t seed, std::string_view tag,
                          std::uint64_t index = 0) {
  return Engine(derive_seed(seed, tag, index));
}

/// Uniform double in [0, 1) from the top 53 bits of one engine draw.
inline double uniform01(Engine& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline bool bernoulli(Engine& rng, double p) { return uniform01(rng) < p; }

/// Uniform integer in [0, n) (n > 0), via rejection to avoid modulo bias.
inline std::uint64_t uniform_index(Engine& rng, std::uint64_t n) {
  std::uniform_int_distribution<std::uint64_t> dist(0, n - 1);
  return dist(rng);
}

}  // namespace noisebal
