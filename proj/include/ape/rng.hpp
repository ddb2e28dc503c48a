#pragma once

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <cstring>
#include <numbers>
#include <vector>

#include "ape/types.hpp"

namespace ape {

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

// Packs a (purpose, cell, replication) triple into a 64-bit stream id so that
// every consumer of randomness in the library draws from its own counter
// stream.  Results are therefore independent of evaluation order and thread
// count.  purpose < 2^8, cell < 2^16, rep < 2^40.
inline uint64_t stream_id(uint64_t purpose, uint64_t cell = 0, uint64_t rep = 0) {
  return (purpose << 56) | ((cell & 0xffffull) << 40) | (rep & 0xffffffffffull);
}

namespace streams {
constexpr uint64_t design_x = 1;
constexpr uint64_t response = 2;
constexpr uint64_t folds = 3;
constexpr uint64_t pilot_cv = 4;
constexpr uint64_t certify = 5;
constexpr uint64_t oracle_mc = 6;
constexpr uint64_t generic = 7;
}  // namespace streams

// Philox4x32-10 counter-based generator.  The 128-bit counter is split into a
// 64-bit position (words 0-1, incremented per block) and a 64-bit stream id
// (words 2-3), so independent streams are cheap and reproducible: any
// (seed, stream) pair names the same sequence regardless of what other
// streams were consumed.
class RngStream {
 public:
  explicit RngStream(uint64_t seed, uint64_t stream = 0) : stream_(stream) {
    const uint64_t k = splitmix64(seed);
    key_[0] = static_cast<uint32_t>(k);
    key_[1] = static_cast<uint32_t>(k >> 32);
  }

  uint32_t next_u32() {
    if (avail_ == 0) refill();
    return block_[static_cast<size_t>(4 - avail_--)];
  }

  uint64_t next_u64() {
    const uint64_t lo = next_u32();
    const uint64_t hi = next_u32();
    return (hi << 32) | lo;
  }

  // Uniform on [0, 1), 53-bit resolution.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform on (0, 1]; safe to pass to log().
  double uniform_pos() {
    return (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
  }

  // Standard normal via Box-Muller, caching the second value of each pair.
  double normal() {
    if (have_cached_) {
      have_cached_ = false;
      return cached_;
    }
    const double u1 = uniform_pos();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * std::numbers::pi * u2;
    cached_ = r * std::sin(a);
    have_cached_ = true;
    return r * std::cos(a);
  }

  // Fills dst[0..m) with standard normals using vectorized array math.
  // Uses its own pair bookkeeping, independent of the scalar cache.
  void fill_normal(double* dst, Index m) {
    constexpr Index chunk = 512;
    Eigen::ArrayXd u1(chunk), u2(chunk), r(chunk), a(chunk);
    Index done = 0;
    while (done < m) {
      const Index want = std::min(m - done, chunk);
      const Index pairs = (want + 1) / 2;
      for (Index i = 0; i < pairs; ++i) {
        u1[i] = uniform_pos();
        u2[i] = uniform();
      }
      r.head(pairs) = (-2.0 * u1.head(pairs).log()).sqrt();
      a.head(pairs) = 2.0 * std::numbers::pi * u2.head(pairs);
      for (Index i = 0; i < pairs; ++i) {
        dst[done + 2 * i] = r[i] * std::cos(a[i]);
        if (done + 2 * i + 1 < done + want) dst[done + 2 * i + 1] = r[i] * std::sin(a[i]);
      }
      done += want;
    }
  }

  void fill_normal(Vecd& v) { fill_normal(v.data(), v.size()); }

  // Uniform integer on [0, bound); rejection sampling keeps it exact.
  uint64_t below(uint64_t bound) {
    const uint64_t threshold = (-bound) % bound;  // 2^64 mod bound
    for (;;) {
      const uint64_t x = next_u64();
      if (x >= threshold) return x % bound;
    }
  }

  // Fisher-Yates shuffle; spelled out so sequences are locked to this
  // generator rather than to a standard-library implementation detail.
  template <class T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      const size_t k = static_cast<size_t>(below(i));
      std::swap(v[i - 1], v[k]);
    }
  }

  // One 128-bit block: ten rounds with the standard multipliers and Weyl
  // key schedule.  Exposed for known-answer tests.
  static std::array<uint32_t, 4> block(std::array<uint32_t, 4> ctr,
                                       std::array<uint32_t, 2> key) {
    for (int round = 0; round < 10; ++round) {
      uint32_t hi0, lo0, hi1, lo1;
      mulhilo(0xD2511F53u, ctr[0], hi0, lo0);
      mulhilo(0xCD9E8D57u, ctr[2], hi1, lo1);
      ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
      key[0] += 0x9E3779B9u;
      key[1] += 0xBB67AE85u;
    }
    return ctr;
  }

 private:
  static void mulhilo(uint32_t a, uint32_t b, uint32_t& hi, uint32_t& lo) {
    const uint64_t prod = static_cast<uint64_t>(a) * b;
    hi = static_cast<uint32_t>(prod >> 32);
    lo = static_cast<uint32_t>(prod);
  }

  void refill() {
    block_ = block({static_cast<uint32_t>(counter_), static_cast<uint32_t>(counter_ >> 32),
                    static_cast<uint32_t>(stream_), static_cast<uint32_t>(stream_ >> 32)},
                   {key_[0], key_[1]});
    ++counter_;
    avail_ = 4;
  }

  uint32_t key_[2];
  uint64_t stream_;
  uint64_t counter_ = 0;
  std::array<uint32_t, 4> block_{};
  int avail_ = 0;
  double cached_ = 0.0;
  bool have_cached_ = false;
};

// Balanced fold labels: a seeded permutation dealt round-robin into K folds,
// so fold sizes differ by at most one.
inline std::vector<int> assign_folds(Index n, int k, RngStream stream) {
  if (k < 1) throw std::invalid_argument("assign_folds: fold count must be >= 1");
  if (static_cast<Index>(k) > n)
    throw std::invalid_argument("assign_folds: more folds than observations");
  std::vector<Index> perm(static_cast<size_t>(n));
  for (Index i = 0; i < n; ++i) perm[static_cast<size_t>(i)] = i;
  stream.shuffle(perm);
  std::vector<int> fold(static_cast<size_t>(n));
  for (Index i = 0; i < n; ++i)
    fold[static_cast<size_t>(perm[static_cast<size_t>(i)])] = static_cast<int>(i % k);
  return fold;
}

}  // namespace ape
