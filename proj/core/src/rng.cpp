#include "matchdet/rng.hpp"

#include <cmath>

namespace matchdet {

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  // Box-Muller on (0,1] uniforms; u > 0 guaranteed by the +1 ulp shift.
  double u = (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
  double v = static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  double r = std::sqrt(-2.0 * std::log(u));
  double a = 6.283185307179586476925286766559 * v;
  spare_ = r * std::sin(a);
  has_spare_ = true;
  return r * std::cos(a);
}

std::uint64_t Rng::below(std::uint64_t n) {
  if (n == 0) return 0;
  std::uint64_t threshold = (0ULL - n) % n;  // 2^64 mod n
  for (;;) {
    std::uint64_t r = next_u64();
    if (r >= threshold) return r % n;
  }
}

Rng Rng::fork(std::uint64_t stream) const {
  return Rng(mix_seed(state_ ^ 0xa0761d6478bd642fULL, stream));
}

std::uint64_t mix_seed(std::uint64_t base, std::uint64_t index) {
  std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace matchdet
