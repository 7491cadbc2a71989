#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

namespace tmn {

// All sampling goes through these helpers: the std:: distributions are
// implementation-defined, mt19937_64 itself is bit-exact everywhere.

inline double uniform_real(std::mt19937_64& g) {  // [0,1)
  return static_cast<double>(g() >> 11) * 0x1.0p-53;
}

inline int64_t uniform_int(std::mt19937_64& g, int64_t n) {  // [0,n)
  return static_cast<int64_t>(g() % static_cast<uint64_t>(n));
}

inline double normal(std::mt19937_64& g) {
  // Box-Muller, cosine branch only
  double u1 = uniform_real(g);
  double u2 = uniform_real(g);
  if (u1 < 1e-300) u1 = 1e-300;
  return std::sqrt(-2.0 * std::log(u1)) *
         std::cos(2.0 * std::numbers::pi_v<double> * u2);
}

// splitmix-style combine for deriving independent stream seeds
inline uint64_t mix_seed(uint64_t a, uint64_t b) {
  uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 0x632be59bd9b4e019ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// FNV-1a over bytes, used for file checksums and catalog hashes
inline uint64_t fnv1a(const void* data, size_t len, uint64_t h = 1469598103934665603ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace tmn
