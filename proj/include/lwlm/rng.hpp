// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <string_view>
#include <vector>

namespace lwlm {

/// Deterministic counter-seeded generator (xoshiro256** seeded via splitmix64).
///
/// All randomness in the project flows from one root seed through named
/// substreams and per-item derivations, so parallel and serial execution
/// produce bit-identical results and no libstdc++ distribution internals
/// leak into the outputs.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) {
    std::uint64_t x = seed;
    for (auto& word : state_) word = splitmix64(x);
  }

  static std::uint64_t hash_name(std::string_view name) {
    // FNV-1a 64-bit
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : name) {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
    return h;
  }

  /// Named substream of a root seed ("dataset", "mask", "batch", "init", ...).
  static Rng substream(std::uint64_t root_seed, std::string_view name) {
    std::uint64_t x = root_seed ^ hash_name(name);
    return Rng(splitmix64(x));
  }

  /// Stream derived from this generator's seed material and two indices,
  /// independent of how much this generator has already been consumed.
  /// Used for per-sample streams keyed on (location_id, config index).
  Rng derive(std::uint64_t a, std::uint64_t b = 0) const {
    std::uint64_t x = state_[0] ^ (state_[1] << 1);
    x += 0x9e3779b97f4a7c15ULL * (a + 1);
    std::uint64_t s = splitmix64(x);
    s += 0xbf58476d1ce4e5b9ULL * (b + 1);
    return Rng(splitmix64(s));
  }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  /// Uniform double in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n). Rejection-free 128-bit multiply (Lemire).
  std::uint64_t uniform_index(std::uint64_t n) {
    if (n == 0) throw std::invalid_argument("uniform_index: n must be positive");
    using u128 = unsigned __int128;
    return static_cast<std::uint64_t>((static_cast<u128>(next_u64()) * n) >> 64);
  }

  /// Standard normal via Box-Muller (cosine branch only, fixed consumption).
  double gaussian() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  /// k distinct indices drawn uniformly from [0, n), in draw order.
  std::vector<int> sample_without_replacement(int n, int k) {
    if (k < 0 || k > n) throw std::invalid_argument("sample_without_replacement: k out of range");
    std::vector<int> pool(n);
    for (int i = 0; i < n; ++i) pool[i] = i;
    for (int i = 0; i < k; ++i) {
      const int j = i + static_cast<int>(uniform_index(static_cast<std::uint64_t>(n - i)));
      std::swap(pool[i], pool[j]);
    }
    pool.resize(k);
    return pool;
  }

 private:
  static std::uint64_t splitmix64(std::uint64_t& x) {
    x += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = x;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }
  static std::uint64_t splitmix64(std::uint64_t&& x) {
    std::uint64_t tmp = x;
    return splitmix64(tmp);
  }
  static constexpr std::uint64_t rotl(std::uint64_t v, int k) {
    return (v << k) | (v >> (64 - k));
  }

  std::uint64_t state_[4];
};

}  // namespace lwlm
