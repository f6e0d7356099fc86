#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <sstream>
#include <string>

namespace ebm {

using Rng = std::mt19937_64;

// SplitMix64 finalizer; used to derive independent stream seeds.
inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> path) {
  std::uint64_t s = mix64(seed);
  for (auto p : path) s = mix64(s ^ mix64(p + 0x632be59bd9b4e019ULL));
  return s;
}

inline Rng derive_rng(std::uint64_t seed, std::initializer_list<std::uint64_t> path) {
  return Rng(derive_seed(seed, path));
}

// Fresh distribution objects per draw, so the sequence depends on the engine
// state alone and survives engine save/restore.
inline double standard_normal(Rng& rng) { return std::normal_distribution<double>(0.0, 1.0)(rng); }

inline double uniform01(Rng& rng) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng); }

inline std::size_t uniform_index(Rng& rng, std::size_t n) {
  return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

inline std::string rng_state(const Rng& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

inline Rng rng_from_state(const std::string& state) {
  Rng rng;
  std::istringstream is(state);
  is >> rng;
  return rng;
}

}  // namespace ebm
