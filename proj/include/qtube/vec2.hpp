#pragma once
/**
 * @file vec2.hpp
 * @brief Plain 2-D vector and a unit-vector strong type.
 *
 * Vec2 is an aggregate with the handful of operations the billiard code
 * needs. UnitVec2 wraps a Vec2 that is known to have norm 1 (within
 * kUnitTolerance); it is the type used for velocities and normals.
 */

#include <cmath>
#include <stdexcept>

namespace qtube {

struct Vec2 {
  double x{0.0};
  double y{0.0};

  constexpr Vec2 operator+(Vec2 o) const { return {x + o.x, y + o.y}; }
  constexpr Vec2 operator-(Vec2 o) const { return {x - o.x, y - o.y}; }
  constexpr Vec2 operator-() const { return {-x, -y}; }
  constexpr Vec2 operator*(double s) const { return {x * s, y * s}; }
  constexpr Vec2 operator/(double s) const { return {x / s, y / s}; }
  constexpr Vec2& operator+=(Vec2 o) { x += o.x; y += o.y; return *this; }
  constexpr Vec2& operator-=(Vec2 o) { x -= o.x; y -= o.y; return *this; }
  constexpr bool operator==(const Vec2&) const = default;
};

constexpr Vec2 operator*(double s, Vec2 v) { return v * s; }

constexpr double dot(Vec2 a, Vec2 b) { return a.x * b.x + a.y * b.y; }
/// z-component of the 3-D cross product.
constexpr double cross(Vec2 a, Vec2 b) { return a.x * b.y - a.y * b.x; }
/// Counter-clockwise rotation by 90 degrees.
constexpr Vec2 perp(Vec2 a) { return {-a.y, a.x}; }

inline double norm(Vec2 a) { return std::hypot(a.x, a.y); }
inline double distance(Vec2 a, Vec2 b) { return norm(a - b); }
inline bool is_finite(Vec2 a) { return std::isfinite(a.x) && std::isfinite(a.y); }

inline constexpr double kUnitTolerance = 1e-12;

/**
 * Vector on the unit circle.
 *
 * `from_normalized` rescales an arbitrary non-zero vector; the checked
 * constructor rejects inputs whose norm is off by more than kUnitTolerance.
 * `unchecked` is for hot paths whose arithmetic already preserves the norm.
 */
class UnitVec2 {
 public:
  constexpr UnitVec2() = default;

  UnitVec2(double x, double y) : v_{x, y} {
    if (!is_finite(v_) || std::abs(norm(v_) - 1.0) > kUnitTolerance) {
      throw std::invalid_argument("UnitVec2: vector is not of unit length");
    }
  }

  static UnitVec2 from_normalized(Vec2 v) {
    const double n = norm(v);
    if (!(n > 0.0) || !std::isfinite(n)) {
      throw std::invalid_argument("UnitVec2: cannot normalize zero vector");
    }
    return unchecked(v / n);
  }

  static constexpr UnitVec2 unchecked(Vec2 v) {
    UnitVec2 u;
    u.v_ = v;
    return u;
  }

  /// Direction at angle `theta` (radians) from the +x axis.
  static UnitVec2 from_angle(double theta) {
    return unchecked({std::cos(theta), std::sin(theta)});
  }

  constexpr double x() const { return v_.x; }
  constexpr double y() const { return v_.y; }
  constexpr Vec2 vec() const { return v_; }
  constexpr operator Vec2() const { return v_; }  // NOLINT(google-explicit-constructor)
  constexpr UnitVec2 operator-() const { return unchecked(-v_); }
  constexpr bool operator==(const UnitVec2&) const = default;

 private:
  Vec2 v_{1.0, 0.0};
};

}  // namespace qtube
