#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string_view>

#include "omlab/array.hpp"

namespace omlab {

/// splitmix64 finalizer over the pair; used to derive independent stream seeds.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) noexcept;

/// FNV-1a 64-bit of a string, for naming RNG streams.
std::uint64_t name_hash(std::string_view name) noexcept;

/// Seeded generator with platform-independent output. The distributions are
/// implemented here because the std:: ones are implementation-defined.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [lo, hi].
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);
  /// Standard normal via Box-Muller.
  double normal();

  template <typename T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      auto j = static_cast<std::size_t>(uniform_int(0, static_cast<std::int64_t>(i) - 1));
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
  double cached_normal_ = 0.0;
  bool has_cached_ = false;
};

Array normal_array(Rng& rng, Shape shape, double stddev = 1.0);

}  // namespace omlab
