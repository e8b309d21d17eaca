#pragma once

#include <limits>
#include <string>

namespace fdpg {

// A real number or +inf. Infinity is an explicit marker so that the
// conventions 0 * inf = 0 and finite + inf = inf are applied by rule.
class ExtendedReal {
 public:
  constexpr ExtendedReal() = default;
  constexpr ExtendedReal(double v) : value_(v) {}  // NOLINT: implicit from finite reals

  static constexpr ExtendedReal infinity() {
    ExtendedReal r;
    r.infinite_ = true;
    return r;
  }

  constexpr bool is_infinite() const { return infinite_; }
  constexpr bool is_finite() const { return !infinite_; }

  // Finite value; +inf maps to the floating-point infinity.
  constexpr double to_double() const {
    return infinite_ ? std::numeric_limits<double>::infinity() : value_;
  }
  constexpr double value() const { return value_; }

  friend constexpr ExtendedReal operator+(ExtendedReal a, ExtendedReal b) {
    if (a.infinite_ || b.infinite_) return infinity();
    return ExtendedReal(a.value_ + b.value_);
  }
  ExtendedReal& operator+=(ExtendedReal o) { return *this = *this + o; }

  // weight * this with weight >= 0; a zero weight annihilates infinity.
  constexpr ExtendedReal scaled_by(double weight) const {
    if (weight == 0.0) return ExtendedReal(0.0);
    if (infinite_) return infinity();
    return ExtendedReal(weight * value_);
  }

  friend constexpr bool operator==(ExtendedReal a, ExtendedReal b) {
    if (a.infinite_ || b.infinite_) return a.infinite_ == b.infinite_;
    return a.value_ == b.value_;
  }

  // "inf" for infinity, shortest round-trip decimal otherwise.
  std::string to_string() const;

 private:
  double value_ = 0.0;
  bool infinite_ = false;
};

}  // namespace fdpg
