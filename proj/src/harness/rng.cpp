#include "nps/harness/rng.hpp"

#include <cmath>
#include <stdexcept>

namespace nps::sim {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t fnv1a64(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

double portable_ln(double x) {
  if (!(x > 0)) throw std::domain_error("portable_ln needs x > 0");
  int e = 0;
  double m = std::frexp(x, &e);  // x = m * 2^e, m in [0.5, 1)
  if (m < 0.70710678118654752) {
    m *= 2;
    --e;
  }
  // ln m = 2 atanh(z), z = (m - 1) / (m + 1), |z| < 0.172
  const double z = (m - 1) / (m + 1);
  const double z2 = z * z;
  double term = z, sum = 0;
  for (int k = 1; k < 40; k += 2) {
    sum += term / k;
    term *= z2;
  }
  constexpr double ln2 = 0.69314718055994530942;
  return 2 * sum + e * ln2;
}

double Stream::unit_open() {
  // 53 random bits centred in their cell: never 0, never 1.
  return (static_cast<double>(next() >> 11) + 0.5) * 0x1.0p-53;
}

std::uint64_t Stream::below(std::uint64_t n) {
  if (n == 0) throw std::invalid_argument("Stream::below(0)");
  // Rejection keeps the result unbiased.
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t v;
  do v = next();
  while (v >= limit);
  return v % n;
}

std::int64_t Stream::exponential_us(const Rational& rate_per_s) {
  const double mean_us = 1e6 / rate_per_s.to_double();
  const double gap = -portable_ln(unit_open()) * mean_us;
  const auto us = static_cast<std::int64_t>(std::ceil(gap));
  return us < 1 ? 1 : us;
}

}  // namespace nps::sim
