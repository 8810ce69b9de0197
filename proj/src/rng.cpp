#include "emc2/rng.hpp"

#include <cmath>
#include <numbers>

namespace emc2 {

double RandomStream::next_normal() {
  // Box-Muller; u1 in (0,1] so the log is finite.
  const double u1 = static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
  const double u2 = next_double();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

}  // namespace emc2
