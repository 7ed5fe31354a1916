#include "sbp/rng.hpp"

#include <cmath>
#include <numbers>

namespace sbp {

std::uint64_t CounterRng::below(std::uint64_t n) noexcept {
  const std::uint64_t limit = max() - max() % n;
  std::uint64_t r = (*this)();
  while (r >= limit) r = (*this)();
  return r % n;
}

double CounterRng::normal() noexcept {
  const double u1 = uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

}  // namespace sbp
