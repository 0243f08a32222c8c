#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "hgn/types.hpp"

// Small deterministic sampling layer. std::mt19937_64 has a fully specified
// output sequence, but the standard distributions do not, so every draw that
// must reproduce byte-identically across toolchains is hand-rolled here.

namespace hgn::rng {

using Engine = std::mt19937_64;

// splitmix64, used to derive independent per-record streams from (seed, index).
inline std::uint64_t mix(std::uint64_t seed, std::uint64_t index) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline Engine engine_for(std::uint64_t seed, std::uint64_t index) {
  return Engine(mix(seed, index));
}

// Uniform in [0, 1) with 53 random bits.
inline Scalar uniform(Engine& g) {
  return static_cast<Scalar>(g() >> 11) * 0x1.0p-53;
}

inline Scalar uniform(Engine& g, Scalar lo, Scalar hi) {
  return lo + (hi - lo) * uniform(g);
}

// Integer in [0, n).
inline std::uint64_t below(Engine& g, std::uint64_t n) {
  // Rejection sampling keeps the draw unbiased.
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t x;
  do {
    x = g();
  } while (x >= limit);
  return x % n;
}

inline bool bernoulli(Engine& g, Scalar p) { return uniform(g) < p; }

// Box-Muller; one value per call keeps the stream layout simple.
inline Scalar normal(Engine& g) {
  Scalar u1 = uniform(g);
  while (u1 <= 0.0) u1 = uniform(g);
  const Scalar u2 = uniform(g);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

// Marsaglia-Tsang for shape >= 1, boosted for shape < 1.
inline Scalar gamma(Engine& g, Scalar shape) {
  if (shape < 1.0) {
    const Scalar u = uniform(g);
    return gamma(g, shape + 1.0) * std::pow(u > 0 ? u : kLogFloor, 1.0 / shape);
  }
  const Scalar d = shape - 1.0 / 3.0;
  const Scalar c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    Scalar x = normal(g);
    Scalar v = 1.0 + c * x;
    if (v <= 0.0) continue;
    v = v * v * v;
    const Scalar u = uniform(g);
    if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
    if (u > 0 && std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
  }
}

inline Scalar beta(Engine& g, Scalar alpha, Scalar b) {
  const Scalar x = gamma(g, alpha);
  const Scalar y = gamma(g, b);
  return x / (x + y);
}

// Symmetric Dirichlet(1) over n cells.
inline Vec dirichlet_flat(Engine& g, Index n) {
  Vec v(n);
  for (Index i = 0; i < n; ++i) v[i] = gamma(g, 1.0);
  const Scalar s = v.sum();
  return s > 0 ? Vec(v / s) : Vec(Vec::Constant(n, 1.0 / static_cast<Scalar>(n)));
}

}  // namespace hgn::rng
