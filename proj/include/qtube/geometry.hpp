#pragma once
/**
 * @file geometry.hpp
 * @brief Ray/boundary intersection, specular reflection and singularity flags.
 *
 * Boundary pieces are straight segments and circular arcs. All functions are
 * pure; a ray that departs from a boundary piece is never pushed off it,
 * instead the caller passes that piece as `exclude` to `first_hit`.
 *
 * Tolerances (unit-scale geometry, double precision):
 *   - kEpsTan  = 1e-10  tangency on |v.n|, near-miss band on the discriminant
 *   - kEpsVert = 1e-9   distance from a piece endpoint counted as a vertex hit
 *   - kEpsLen  = 1e-12  minimum advance along a ray
 */

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <span>
#include <type_traits>
#include <variant>

#include "qtube/vec2.hpp"

namespace qtube {

inline constexpr double kEpsTan = 1e-10;
inline constexpr double kEpsVert = 1e-9;
inline constexpr double kEpsLen = 1e-12;
inline constexpr double kTwoPi = 2.0 * std::numbers::pi;

struct Segment {
  Vec2 a;
  Vec2 b;

  double length() const { return distance(a, b); }
  Vec2 point_at(double s) const { return a + (b - a) * s; }
  bool operator==(const Segment&) const = default;
};

/// Counter-clockwise arc of a circle, starting at `angle_start`.
struct Arc {
  Vec2 center;
  double radius{1.0};
  double angle_start{0.0};
  double angle_span{kTwoPi};

  static Arc circle(Vec2 c, double r) { return {c, r, 0.0, kTwoPi}; }

  bool is_full_circle() const { return angle_span >= kTwoPi - 1e-12; }
  bool operator==(const Arc&) const = default;
  double length() const { return radius * angle_span; }
  Vec2 point_at_angle(double phi) const {
    return center + Vec2{std::cos(phi), std::sin(phi)} * radius;
  }
  Vec2 start() const { return point_at_angle(angle_start); }
  Vec2 end() const { return point_at_angle(angle_start + angle_span); }
};

using Shape = std::variant<Segment, Arc>;

using PieceId = std::uint32_t;
inline constexpr PieceId kNoPiece = 0xffffffffu;

enum class PieceKind : std::uint8_t { flat, curved, gate };
enum class HitFlag : std::uint8_t { clean, tangential, vertex };

struct IdentifiedPiece {
  PieceId id{kNoPiece};
  PieceKind kind{PieceKind::flat};
  Shape shape;
};

struct HitRecord {
  double t{0.0};
  Vec2 point;
  UnitVec2 normal;  // opposes the incoming ray
  PieceId piece_id{kNoPiece};
  PieceKind kind{PieceKind::flat};
  HitFlag flag{HitFlag::clean};
};

namespace detail {

inline double wrap_angle(double a) {
  a = std::fmod(a, kTwoPi);
  return a < 0.0 ? a + kTwoPi : a;
}

inline HitFlag worse(HitFlag a, HitFlag b) {
  if (a == HitFlag::vertex || b == HitFlag::vertex) return HitFlag::vertex;
  if (a == HitFlag::tangential || b == HitFlag::tangential) return HitFlag::tangential;
  return HitFlag::clean;
}

}  // namespace detail

/// Earliest hit with t > kEpsLen on the closed segment. Rays parallel to the
/// segment never hit it.
inline std::optional<HitRecord> intersect_ray_segment(Vec2 origin, UnitVec2 dir,
                                                      const Segment& seg) {
  const Vec2 e = seg.b - seg.a;
  const double len = norm(e);
  const double denom = cross(dir, e);
  if (std::abs(denom) <= 1e-300 || len <= 0.0) return std::nullopt;
  const Vec2 w = seg.a - origin;
  const double t = cross(w, e) / denom;
  if (!(t > kEpsLen)) return std::nullopt;
  const double s = cross(w, dir.vec()) / denom;
  const double slack = kEpsVert / len;
  if (s < -slack || s > 1.0 + slack) return std::nullopt;

  HitRecord h;
  h.t = t;
  h.point = origin + dir.vec() * t;
  Vec2 n = perp(e) / len;
  if (dot(dir.vec(), n) > 0.0) n = -n;
  h.normal = UnitVec2::unchecked(n);
  h.kind = PieceKind::flat;
  if (s * len < kEpsVert || (1.0 - s) * len < kEpsVert) {
    h.flag = HitFlag::vertex;
  } else if (std::abs(dot(dir.vec(), n)) < kEpsTan) {
    h.flag = HitFlag::tangential;
  }
  return h;
}

/**
 * Entering intersection of a ray with a convex arc (the ray is outside the
 * circle). Only the first root of the circle is considered, so a ray starting
 * inside the circle never hits it. Near misses with discriminant above
 * -kEpsTan * r^2 are reported as tangential hits at the closest approach.
 */
inline std::optional<HitRecord> intersect_ray_arc(Vec2 origin, UnitVec2 dir, const Arc& arc) {
  const Vec2 f = origin - arc.center;
  const double r2 = arc.radius * arc.radius;
  const double b = dot(f, dir.vec());
  const double c = dot(f, f) - r2;
  double disc = b * b - c;
  if (disc < -kEpsTan * r2) return std::nullopt;
  const bool near_miss = disc < 0.0;
  if (near_miss) disc = 0.0;
  const double sq = std::sqrt(disc);
  // t1 = -b - sq, evaluated without cancellation when approaching.
  const double t = (b < 0.0 && -b + sq > 0.0) ? c / (-b + sq) : -b - sq;
  if (!(t > kEpsLen) || c < 0.0) return std::nullopt;  // c < 0: origin inside

  const Vec2 p = origin + dir.vec() * t;
  HitFlag flag = HitFlag::clean;
  if (!arc.is_full_circle()) {
    const double rel = detail::wrap_angle(std::atan2(p.y - arc.center.y, p.x - arc.center.x) -
                                          arc.angle_start);
    const double slack = kEpsVert / arc.radius;
    // rel in [0, 2pi); a point just before the start wraps near 2pi.
    const double before_start = kTwoPi - rel;
    if (rel > arc.angle_span + slack && before_start > slack) return std::nullopt;
    if (rel * arc.radius < kEpsVert || before_start * arc.radius < kEpsVert ||
        std::abs(arc.angle_span - rel) * arc.radius < kEpsVert) {
      flag = HitFlag::vertex;
    }
  }
  // Normalize by the actual distance: p is only on the circle up to rounding,
  // and a slightly non-unit normal would make the speed drift bounce by bounce.
  const Vec2 n = (p - arc.center) / norm(p - arc.center);
  if (flag == HitFlag::clean && (near_miss || std::abs(dot(dir.vec(), n)) < kEpsTan)) {
    flag = HitFlag::tangential;
  }
  HitRecord h;
  h.t = t;
  h.point = p;
  h.normal = UnitVec2::unchecked(n);
  h.kind = PieceKind::curved;
  h.flag = flag;
  return h;
}

inline std::optional<HitRecord> intersect_ray_shape(Vec2 origin, UnitVec2 dir, const Shape& s) {
  if (const auto* seg = std::get_if<Segment>(&s)) return intersect_ray_segment(origin, dir, *seg);
  return intersect_ray_arc(origin, dir, std::get<Arc>(s));
}

/// Specular reflection v - 2 (v.n) n. Returns nullopt for grazing incidence
/// (|v.n| < kEpsTan), which callers treat as a tangential singularity.
inline std::optional<UnitVec2> reflect(UnitVec2 v, UnitVec2 n) {
  const double vn = dot(v.vec(), n.vec());
  if (std::abs(vn) < kEpsTan) return std::nullopt;
  const Vec2 r = v.vec() - n.vec() * (2.0 * vn);
  return UnitVec2::unchecked(r / norm(r));
}

/**
 * Nearest hit over `pieces`, skipping `exclude`. Two hits closer than kEpsLen
 * in time are a corner hit and are flagged as a vertex.
 */
inline std::optional<HitRecord> first_hit(Vec2 origin, UnitVec2 dir,
                                          std::span<const IdentifiedPiece> pieces,
                                          PieceId exclude = kNoPiece) {
  std::optional<HitRecord> best;
  bool tie = false;
  for (const auto& piece : pieces) {
    if (piece.id == exclude) continue;
    auto h = intersect_ray_shape(origin, dir, piece.shape);
    if (!h) continue;
    if (!best) {
      best = h;
      best->piece_id = piece.id;
      best->kind = piece.kind;
      tie = false;
      continue;
    }
    if (h->t < best->t - kEpsLen) {
      best = h;
      best->piece_id = piece.id;
      best->kind = piece.kind;
      tie = false;
    } else if (h->t <= best->t + kEpsLen) {
      tie = true;
      if (h->t < best->t) {
        best = h;
        best->piece_id = piece.id;
        best->kind = piece.kind;
      }
    }
  }
  if (best && tie) best->flag = HitFlag::vertex;
  return best;
}

// ---------------------------------------------------------------------------
// Static predicates used by the configuration validators.

inline double point_segment_distance(Vec2 p, const Segment& s) {
  const Vec2 e = s.b - s.a;
  const double l2 = dot(e, e);
  double u = l2 > 0.0 ? dot(p - s.a, e) / l2 : 0.0;
  u = std::clamp(u, 0.0, 1.0);
  return distance(p, s.point_at(u));
}

inline bool angle_on_arc(const Arc& arc, double phi, double slack = 1e-12) {
  if (arc.is_full_circle()) return true;
  const double rel = detail::wrap_angle(phi - arc.angle_start);
  return rel <= arc.angle_span + slack || kTwoPi - rel <= slack;
}

inline double point_arc_distance(Vec2 p, const Arc& arc) {
  const Vec2 d = p - arc.center;
  const double r = norm(d);
  if (r > 0.0 && angle_on_arc(arc, std::atan2(d.y, d.x))) return std::abs(r - arc.radius);
  if (arc.is_full_circle()) return arc.radius;  // p at the center
  return std::min(distance(p, arc.start()), distance(p, arc.end()));
}

inline bool segments_intersect(const Segment& s1, const Segment& s2, double tol = 1e-12) {
  const Vec2 d1 = s1.b - s1.a;
  const Vec2 d2 = s2.b - s2.a;
  const double denom = cross(d1, d2);
  if (std::abs(denom) < 1e-15) {
    // Parallel: intersect only when collinear and overlapping.
    if (std::abs(cross(s2.a - s1.a, d1)) > tol * norm(d1)) return false;
    return point_segment_distance(s2.a, s1) <= tol || point_segment_distance(s2.b, s1) <= tol ||
           point_segment_distance(s1.a, s2) <= tol || point_segment_distance(s1.b, s2) <= tol;
  }
  const double t = cross(s2.a - s1.a, d2) / denom;
  const double u = cross(s2.a - s1.a, d1) / denom;
  return t >= -tol && t <= 1.0 + tol && u >= -tol && u <= 1.0 + tol;
}

inline bool segment_arc_intersect(const Segment& s, const Arc& arc) {
  const Vec2 d = s.b - s.a;
  const Vec2 f = s.a - arc.center;
  const double A = dot(d, d);
  const double B = 2.0 * dot(f, d);
  const double C = dot(f, f) - arc.radius * arc.radius;
  const double disc = B * B - 4.0 * A * C;
  if (disc < 0.0 || A == 0.0) return false;
  const double sq = std::sqrt(disc);
  for (double t : {(-B - sq) / (2.0 * A), (-B + sq) / (2.0 * A)}) {
    if (t < -1e-12 || t > 1.0 + 1e-12) continue;
    const Vec2 p = s.point_at(t);
    if (angle_on_arc(arc, std::atan2(p.y - arc.center.y, p.x - arc.center.x))) return true;
  }
  return false;
}

inline bool arcs_intersect(const Arc& a1, const Arc& a2) {
  const Vec2 d = a2.center - a1.center;
  const double dist = norm(d);
  const double r1 = a1.radius, r2 = a2.radius;
  if (dist > r1 + r2 || dist < std::abs(r1 - r2) || dist == 0.0) return false;
  const double along = (r1 * r1 - r2 * r2 + dist * dist) / (2.0 * dist);
  const double h = std::sqrt(std::max(0.0, r1 * r1 - along * along));
  const Vec2 base = a1.center + d * (along / dist);
  const Vec2 off = perp(d) * (h / dist);
  for (Vec2 p : {base + off, base - off}) {
    if (angle_on_arc(a1, std::atan2(p.y - a1.center.y, p.x - a1.center.x)) &&
        angle_on_arc(a2, std::atan2(p.y - a2.center.y, p.x - a2.center.x))) {
      return true;
    }
  }
  return false;
}

inline bool shapes_intersect(const Shape& a, const Shape& b) {
  return std::visit(
      [](const auto& x, const auto& y) -> bool {
        using X = std::decay_t<decltype(x)>;
        using Y = std::decay_t<decltype(y)>;
        if constexpr (std::is_same_v<X, Segment> && std::is_same_v<Y, Segment>) {
          return segments_intersect(x, y);
        } else if constexpr (std::is_same_v<X, Segment>) {
          return segment_arc_intersect(x, y);
        } else if constexpr (std::is_same_v<Y, Segment>) {
          return segment_arc_intersect(y, x);
        } else {
          return arcs_intersect(x, y);
        }
      },
      a, b);
}

inline Vec2 shape_start(const Shape& s) {
  if (const auto* seg = std::get_if<Segment>(&s)) return seg->a;
  return std::get<Arc>(s).start();
}

inline Vec2 shape_end(const Shape& s) {
  if (const auto* seg = std::get_if<Segment>(&s)) return seg->b;
  return std::get<Arc>(s).end();
}

inline double shape_length(const Shape& s) {
  if (const auto* seg = std::get_if<Segment>(&s)) return seg->length();
  return std::get<Arc>(s).length();
}

/// Point at fraction `f` in [0,1] of the piece's arc length.
inline Vec2 shape_point(const Shape& s, double f) {
  if (const auto* seg = std::get_if<Segment>(&s)) return seg->point_at(f);
  const auto& arc = std::get<Arc>(s);
  return arc.point_at_angle(arc.angle_start + f * arc.angle_span);
}

/// Signed area; positive for counter-clockwise vertex order.
inline double signed_area(std::span<const Vec2> poly) {
  double a = 0.0;
  for (std::size_t i = 0; i < poly.size(); ++i) {
    a += cross(poly[i], poly[(i + 1) % poly.size()]);
  }
  return 0.5 * a;
}

/// Crossing-number test; points on the boundary may go either way.
inline bool point_in_polygon(Vec2 p, std::span<const Vec2> poly) {
  bool inside = false;
  for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
    const Vec2 a = poly[i], b = poly[j];
    if ((a.y > p.y) != (b.y > p.y)) {
      const double x = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
      if (p.x < x) inside = !inside;
    }
  }
  return inside;
}

/// No two non-adjacent sides intersect and no side is degenerate.
inline bool polygon_is_simple(std::span<const Vec2> poly) {
  const std::size_t n = poly.size();
  if (n < 3) return false;
  for (std::size_t i = 0; i < n; ++i) {
    const Segment si{poly[i], poly[(i + 1) % n]};
    if (si.length() < 1e-9) return false;
    for (std::size_t j = i + 1; j < n; ++j) {
      if (j == i + 1 || (i == 0 && j == n - 1)) continue;
      const Segment sj{poly[j], poly[(j + 1) % n]};
      if (segments_intersect(si, sj)) return false;
    }
  }
  return true;
}

}  // namespace qtube
