#pragma once

#include <compare>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>

namespace nps {

/// Exact signed rational with 64-bit numerator and positive denominator.
///
/// Costs, selectivities, capacities and link parameters are carried as
/// rationals so that sums and products over stage groups are exact and the
/// cost model gives identical answers on every platform. Intermediate
/// products are formed in 128 bits; a result that does not fit back into
/// 64 bits after reduction throws std::overflow_error.
class Rational {
 public:
  constexpr Rational() = default;
  Rational(std::int64_t num, std::int64_t den = 1);

  /// Parses "3", "-2.5", "0.125" or "1/3". Decimal text is converted
  /// exactly (0.1 becomes 1/10, not the nearest double).
  static Rational parse(std::string_view text);

  /// Converts via the shortest round-trip decimal form of `value`.
  static Rational from_double(double value);

  std::int64_t num() const { return num_; }
  std::int64_t den() const { return den_; }

  double to_double() const;
  std::string str() const;

  bool is_zero() const { return num_ == 0; }
  bool is_positive() const { return num_ > 0; }
  bool is_negative() const { return num_ < 0; }

  /// ceil(n * this) for non-negative n and non-negative this.
  std::uint64_t ceil_mul(std::uint64_t n) const;
  /// ceil(this) for non-negative values.
  std::int64_t ceil() const;

  Rational operator-() const { return Rational{-num_, den_}; }
  Rational& operator+=(const Rational& o);
  Rational& operator-=(const Rational& o);
  Rational& operator*=(const Rational& o);
  Rational& operator/=(const Rational& o);

  friend Rational operator+(Rational a, const Rational& b) { return a += b; }
  friend Rational operator-(Rational a, const Rational& b) { return a -= b; }
  friend Rational operator*(Rational a, const Rational& b) { return a *= b; }
  friend Rational operator/(Rational a, const Rational& b) { return a /= b; }

  friend bool operator==(const Rational& a, const Rational& b) {
    return a.num_ == b.num_ && a.den_ == b.den_;
  }
  friend std::strong_ordering operator<=>(const Rational& a, const Rational& b);

 private:
  static Rational reduced(__int128 num, __int128 den);

  std::int64_t num_ = 0;
  std::int64_t den_ = 1;
};

std::ostream& operator<<(std::ostream& os, const Rational& r);

}  // namespace nps
