#pragma once

// Seeded, platform-independent random streams. Every stream is derived from
// (master_seed, trial_index, purpose_tag) so studies can draw independent data per
// trial and per purpose without sharing generator state.

#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <string_view>
#include <utility>
#include <vector>

#include "mmotdc/tensor.hpp"

namespace mmotdc {

/// 64-bit FNV-1a; stable across platforms, unlike std::hash.
inline std::uint64_t fnv1a(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

class RandomStream {
 public:
  RandomStream(std::uint64_t master_seed, std::uint64_t trial_index, std::string_view purpose) {
    const std::uint64_t tag = fnv1a(purpose);
    auto lo = [](std::uint64_t v) { return static_cast<std::uint32_t>(v & 0xffffffffULL); };
    auto hi = [](std::uint64_t v) { return static_cast<std::uint32_t>(v >> 32); };
    std::seed_seq seq{lo(master_seed), hi(master_seed), lo(trial_index), hi(trial_index), lo(tag), hi(tag)};
    engine_.seed(seq);
  }

  /// Uniform double in [0, 1) built from the top 53 bits of one draw.
  double uniform01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  /// Uniform integer in [0, n) by rejection (no modulo bias).
  std::uint64_t below(std::uint64_t n) {
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t r;
    do {
      r = engine_();
    } while (r >= limit);
    return r % n;
  }

 private:
  std::mt19937_64 engine_;
};

/// rows x cols matrix with i.i.d. entries uniform on [0, 1).
inline DenseTensor gen_uniform_matrix(std::size_t rows, std::size_t cols, RandomStream& stream) {
  DenseTensor out(Shape{rows, cols});
  for (auto& v : out.values()) v = stream.uniform01();
  return out;
}

/// Fisher-Yates shuffle of 0..n-1.
inline std::vector<std::size_t> random_permutation(std::size_t n, RandomStream& stream) {
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  for (std::size_t i = n; i-- > 1;) std::swap(perm[i], perm[stream.below(i + 1)]);
  return perm;
}

}  // namespace mmotdc
