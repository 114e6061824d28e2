#pragma once

#include <cstdint>
#include <random>
#include <string_view>

#include "nps/core/rational.hpp"

namespace nps::sim {

std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t fnv1a64(std::string_view text);

/// Natural log from frexp and an atanh series, so draws do not depend on
/// the platform libm. Requires x > 0.
double portable_ln(double x);

/// One deterministic random substream. Only the raw mt19937_64 output is
/// used; every mapping to a distribution is done here.
class Stream {
 public:
  explicit Stream(std::uint64_t seed) : engine_(splitmix64(seed)) {}
  /// Substream keyed by a name, independent of every other name.
  Stream(std::uint64_t seed, std::string_view name) : Stream(seed ^ fnv1a64(name)) {}

  std::uint64_t next() { return engine_(); }
  /// Uniform on the open interval (0, 1).
  double unit_open();
  /// Integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  /// Exponential inter-arrival gap in whole microseconds (at least 1).
  std::int64_t exponential_us(const Rational& rate_per_s);

 private:
  std::mt19937_64 engine_;
};

}  // namespace nps::sim
