#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace osq {

// Portable random stream. The engine is std::mt19937_64, whose output sequence
// is fixed by the C++ standard; the distributions below are implemented here
// because the standard library distributions are implementation-defined.
// Stream version 1: changing any of these helpers must bump kRngStreamVersion.
inline constexpr int kRngStreamVersion = 1;

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  // Independent stream for item `index` of a run seeded with `seed`.
  static Rng derive(std::uint64_t seed, std::uint64_t index);

  std::uint64_t next_u64() { return engine_(); }

  // Uniform integer in [0, bound); bound > 0. Rejection sampling, no modulo bias.
  std::uint64_t below(std::uint64_t bound);

  // Uniform integer in [lo, hi] inclusive.
  std::int64_t between(std::int64_t lo, std::int64_t hi);

  // Uniform double in [0, 1) with 53 random bits.
  double uniform();

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  template <typename T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

  // Random permutation of {first, ..., first + count - 1}.
  std::vector<int> permutation(int count, int first = 0);

 private:
  std::mt19937_64 engine_;
};

// SplitMix64 finalizer, used to decorrelate derived seeds.
std::uint64_t mix64(std::uint64_t x);

}  // namespace osq
