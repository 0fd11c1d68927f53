#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

namespace milgrad {

// Deterministic 64-bit generator (xoshiro256**). All distributions are
// implemented here rather than via <random> adaptors so that draw sequences
// are pinned by this code alone, not by the standard library in use.
//
// Every consumer derives its own generator through substream(seed, name,
// index); streams with distinct names or indices are independent, which keeps
// components (sampler, init, noise) individually replayable from one seed.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  static Rng substream(std::uint64_t seed, std::string_view name, std::uint64_t index = 0);

  std::uint64_t next_u64();

  // Uniform on [0, 1), 53-bit resolution.
  double uniform();
  double uniform(double lo, double hi);

  // Uniform integer on [0, n); n must be positive.
  std::uint64_t uniform_index(std::uint64_t n);

  // Standard normal via Box-Muller; the spare draw is cached.
  double normal();
  double normal(double mean, double stddev);

  // Fisher-Yates.
  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::swap(items[i - 1], items[uniform_index(i)]);
    }
  }

  // k distinct values drawn from [0, n), in draw order.
  std::vector<std::uint64_t> sample_without_replacement(std::uint64_t n, std::uint64_t k);

 private:
  std::uint64_t state_[4];
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace milgrad
