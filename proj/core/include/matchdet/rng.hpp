#pragma once

#include <cstdint>

namespace matchdet {

/// Counter-free deterministic random generator (splitmix64 core).
///
/// Every piece of randomness in the project flows through this type so that
/// runs are bit-reproducible across platforms and thread counts. Independent
/// streams are derived with fork(): forking never advances the parent state.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  /// Uniform in [0, 1) with 53 bits of entropy.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller; spare value cached.
  double normal();

  /// Unbiased integer in [0, n) by rejection.
  std::uint64_t below(std::uint64_t n);

  /// Derive an independent stream; the parent state is untouched.
  Rng fork(std::uint64_t stream) const;

 private:
  std::uint64_t state_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

/// Stateless seed mixer for deriving per-sample seeds from (base, index).
std::uint64_t mix_seed(std::uint64_t base, std::uint64_t index);

}  // namespace matchdet
