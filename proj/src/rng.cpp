#include "brainage/rng.hpp"

#include <cmath>
#include <numbers>

namespace brainage {

double SplitMix64::gaussian(double mean, double stddev) noexcept {
  const double u1 = uniform_open_low();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  return mean + stddev * r * std::cos(2.0 * std::numbers::pi * u2);
}

}  // namespace brainage
