#pragma once
/**
 * @file cell.hpp
 * @brief Cell templates, scatterer configurations and compiled cell geometry.
 *
 * A CellTemplate is a simple counter-clockwise polygon with two families of
 * gate sides: gate 1 (sub-gates i = 0..m-1) and gate 2, where
 * tau(gate1_sides[i]) = gate2_sides[i]. Positions on a gate side are arc
 * lengths u measured from the side's start vertex in polygon order. Because
 * glued sides run in opposite directions, the translation maps u on one gate
 * to L - u on the other.
 */

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "qtube/geometry.hpp"

namespace qtube {

/// A gate side in cell-local coordinates: start point, unit tangent in
/// polygon order, inner normal (perp of tangent) and length.
struct GateFrame {
  Vec2 start;
  UnitVec2 tangent;
  UnitVec2 inner_normal;
  double length{0.0};

  Vec2 point(double u) const { return start + tangent.vec() * u; }
  double coordinate(Vec2 p) const { return std::clamp(dot(p - start, tangent.vec()), 0.0, length); }
};

inline GateFrame make_side_frame(Vec2 a, Vec2 b) {
  const double len = distance(a, b);
  const UnitVec2 t = UnitVec2::from_normalized(b - a);
  return {a, t, UnitVec2::unchecked(perp(t.vec())), len};
}

class CellTemplate {
 public:
  CellTemplate() = default;

  /// Validates and builds a template; throws std::invalid_argument naming the
  /// failed condition. When `tau` is omitted it is derived from the first gate pair.
  static CellTemplate make(std::vector<Vec2> vertices, std::vector<int> gate1_sides,
                           std::vector<int> gate2_sides, std::optional<Vec2> tau = std::nullopt);

  /// Axis-aligned rectangle [0,w] x [0,h] with gates on the left (side 3)
  /// and right (side 1) edges.
  static CellTemplate rectangle(double w = 1.0, double h = 1.0) {
    return make({{0, 0}, {w, 0}, {w, h}, {0, h}}, {3}, {1}, Vec2{w, 0});
  }

  const std::vector<Vec2>& vertices() const { return vertices_; }
  const std::vector<int>& gate1_sides() const { return gate1_; }
  const std::vector<int>& gate2_sides() const { return gate2_; }
  Vec2 tau() const { return tau_; }
  std::size_t side_count() const { return vertices_.size(); }
  std::size_t sub_gate_count() const { return gate1_.size(); }

  Segment side(std::size_t i) const {
    return {vertices_[i], vertices_[(i + 1) % vertices_.size()]};
  }

  int side_index(int gate, int sub) const {
    return gate == 1 ? gate1_.at(static_cast<std::size_t>(sub)) : gate2_.at(static_cast<std::size_t>(sub));
  }

  GateFrame gate_frame(int gate, int sub) const {
    const Segment s = side(static_cast<std::size_t>(side_index(gate, sub)));
    return make_side_frame(s.a, s.b);
  }

  /// Total length of gate 1 (equal to that of gate 2).
  double gate_length() const {
    double l = 0.0;
    for (int s : gate1_) l += side(static_cast<std::size_t>(s)).length();
    return l;
  }

 private:
  std::vector<Vec2> vertices_;
  std::vector<int> gate1_;
  std::vector<int> gate2_;
  Vec2 tau_;
};

inline std::vector<std::string> template_problems(const std::vector<Vec2>& vertices,
                                                  const std::vector<int>& g1,
                                                  const std::vector<int>& g2, Vec2 tau) {
  std::vector<std::string> out;
  const int n = static_cast<int>(vertices.size());
  if (n < 3) {
    out.emplace_back("vertices: polygon needs at least 3 vertices");
    return out;
  }
  for (const auto& v : vertices) {
    if (!is_finite(v)) out.emplace_back("vertices: non-finite coordinate");
  }
  if (!out.empty()) return out;
  if (!polygon_is_simple(vertices)) out.emplace_back("vertices: polygon is not simple");
  if (signed_area(vertices) <= 0.0) out.emplace_back("vertices: polygon must be counter-clockwise");
  if (g1.empty() || g1.size() != g2.size()) {
    out.emplace_back("gate1_sides/gate2_sides: need the same non-zero number of sides");
    return out;
  }
  std::vector<int> used;
  for (int s : g1) used.push_back(s);
  for (int s : g2) used.push_back(s);
  for (int s : used) {
    if (s < 0 || s >= n) {
      out.emplace_back("gate sides: side index " + std::to_string(s) + " out of range");
      return out;
    }
  }
  std::sort(used.begin(), used.end());
  if (std::adjacent_find(used.begin(), used.end()) != used.end()) {
    out.emplace_back("gate sides: a side is used twice");
  }
  for (std::size_t i = 0; i < g1.size(); ++i) {
    const Vec2 a1 = vertices[static_cast<std::size_t>(g1[i])];
    const Vec2 b1 = vertices[static_cast<std::size_t>((g1[i] + 1) % n)];
    const Vec2 a2 = vertices[static_cast<std::size_t>(g2[i])];
    const Vec2 b2 = vertices[static_cast<std::size_t>((g2[i] + 1) % n)];
    // tau maps the start of a gate-1 side onto the end of its gate-2 partner.
    if (distance(a1 + tau, b2) > 1e-9 || distance(b1 + tau, a2) > 1e-9) {
      out.emplace_back("tau: does not map gate1 side " + std::to_string(g1[i]) +
                       " onto gate2 side " + std::to_string(g2[i]));
    }
  }
  return out;
}

inline CellTemplate CellTemplate::make(std::vector<Vec2> vertices, std::vector<int> gate1_sides,
                                       std::vector<int> gate2_sides, std::optional<Vec2> tau) {
  Vec2 t{};
  if (tau) {
    t = *tau;
  } else if (!gate1_sides.empty() && !gate2_sides.empty() && vertices.size() >= 3) {
    const auto n = vertices.size();
    const auto s1 = static_cast<std::size_t>(gate1_sides.front());
    const auto s2 = static_cast<std::size_t>(gate2_sides.front());
    if (s1 < n && s2 < n) t = vertices[(s2 + 1) % n] - vertices[s1];
  }
  auto problems = template_problems(vertices, gate1_sides, gate2_sides, t);
  if (!problems.empty()) throw std::invalid_argument("cell template: " + problems.front());
  CellTemplate c;
  c.vertices_ = std::move(vertices);
  c.gate1_ = std::move(gate1_sides);
  c.gate2_ = std::move(gate2_sides);
  c.tau_ = t;
  return c;
}

// ---------------------------------------------------------------------------

/// Closed convex obstacle; its boundary is a counter-clockwise chain of pieces.
struct Scatterer {
  std::vector<Shape> boundary;

  bool operator==(const Scatterer&) const = default;

  static Scatterer disc(Vec2 center, double radius) { return {{Arc::circle(center, radius)}}; }

  static Scatterer convex_polygon(const std::vector<Vec2>& vertices) {
    Scatterer s;
    for (std::size_t i = 0; i < vertices.size(); ++i) {
      s.boundary.emplace_back(Segment{vertices[i], vertices[(i + 1) % vertices.size()]});
    }
    return s;
  }

  Scatterer translated(Vec2 d) const {
    Scatterer s = *this;
    for (auto& piece : s.boundary) {
      if (auto* seg = std::get_if<Segment>(&piece)) {
        seg->a += d;
        seg->b += d;
      } else {
        std::get<Arc>(piece).center += d;
      }
    }
    return s;
  }

  /// Intersection-of-supporting-sets membership, valid for convex boundaries.
  bool contains(Vec2 p, double tol = 0.0) const {
    for (const auto& piece : boundary) {
      if (const auto* seg = std::get_if<Segment>(&piece)) {
        if (boundary.size() > 1 && cross(seg->b - seg->a, p - seg->a) < -tol * seg->length()) {
          return false;
        }
      } else {
        const auto& arc = std::get<Arc>(piece);
        if (distance(p, arc.center) > arc.radius + tol) return false;
      }
    }
    return boundary.size() > 1 || std::holds_alternative<Arc>(boundary.front());
  }
};

struct CellConfig {
  std::string name;
  std::vector<Scatterer> scatterers;
  /// Zero-thickness flat walls used to reshape the cell interior.
  std::vector<Segment> walls;

  bool operator==(const CellConfig&) const = default;
};

struct ConfigBounds {
  int max_pieces{8};         // K
  int max_scatterers{16};    // N
  double min_curvature{0.0};  // k_m

  bool operator==(const ConfigBounds&) const = default;
};

struct Violation {
  std::string constraint;  // count, pieces, chain, convexity, curvature, containment,
                           // disjointness, gate_crossing
  std::string primitive;   // e.g. "scatterer 1", "wall 0"
  std::string detail;
};

namespace detail {

inline std::vector<Vec2> sample_boundary(const Scatterer& s, int per_piece = 32) {
  std::vector<Vec2> pts;
  for (const auto& piece : s.boundary) {
    for (int k = 0; k < per_piece; ++k) pts.push_back(shape_point(piece, (k + 0.5) / per_piece));
    pts.push_back(shape_start(piece));
  }
  return pts;
}

inline std::string fmt_num(double v) {
  std::ostringstream os;
  os.precision(6);
  os << v;
  return os.str();
}

}  // namespace detail

/// Static checks of one configuration against the template and bounds.
/// Returns an empty list iff the configuration is admissible.
inline std::vector<Violation> validate_config(const CellConfig& cfg, const CellTemplate& tpl,
                                              const ConfigBounds& bounds) {
  std::vector<Violation> out;
  const auto& poly = tpl.vertices();
  if (static_cast<int>(cfg.scatterers.size()) > bounds.max_scatterers) {
    out.push_back({"count", "config", std::to_string(cfg.scatterers.size()) + " scatterers > N=" +
                                          std::to_string(bounds.max_scatterers)});
  }

  for (std::size_t si = 0; si < cfg.scatterers.size(); ++si) {
    const auto& sc = cfg.scatterers[si];
    const std::string name = "scatterer " + std::to_string(si);
    if (sc.boundary.empty()) {
      out.push_back({"chain", name, "empty boundary"});
      continue;
    }
    if (static_cast<int>(sc.boundary.size()) > bounds.max_pieces) {
      out.push_back({"pieces", name, std::to_string(sc.boundary.size()) + " pieces > K=" +
                                         std::to_string(bounds.max_pieces)});
    }
    bool chain_ok = true;
    for (std::size_t k = 0; k < sc.boundary.size(); ++k) {
      const auto& piece = sc.boundary[k];
      if (const auto* arc = std::get_if<Arc>(&piece)) {
        if (!(arc->radius > 0.0) || !(arc->angle_span > 0.0) || arc->angle_span > kTwoPi + 1e-12) {
          out.push_back({"chain", name, "degenerate arc"});
          chain_ok = false;
          continue;
        }
        if (bounds.min_curvature > 0.0 && 1.0 / arc->radius < bounds.min_curvature) {
          out.push_back({"curvature", name, "k=" + detail::fmt_num(1.0 / arc->radius) +
                                                " < k_m=" + detail::fmt_num(bounds.min_curvature)});
        }
        if (arc->is_full_circle() && sc.boundary.size() > 1) {
          out.push_back({"chain", name, "full circle must be the only piece"});
          chain_ok = false;
        }
      } else if (std::get<Segment>(piece).length() < 1e-9) {
        out.push_back({"chain", name, "degenerate segment"});
        chain_ok = false;
      }
      if (sc.boundary.size() > 1) {
        const auto& next = sc.boundary[(k + 1) % sc.boundary.size()];
        if (distance(shape_end(piece), shape_start(next)) > 1e-9) {
          out.push_back({"chain", name, "piece " + std::to_string(k) + " does not meet its successor"});
          chain_ok = false;
        }
      }
    }
    if (!chain_ok) continue;

    const auto pts = detail::sample_boundary(sc);
    if (sc.boundary.size() > 1) {
      if (signed_area(pts) <= 0.0) out.push_back({"convexity", name, "boundary is not counter-clockwise"});
      bool convex = true;
      for (const auto& piece : sc.boundary) {
        for (const auto& p : pts) {
          if (const auto* seg = std::get_if<Segment>(&piece)) {
            if (cross(seg->b - seg->a, p - seg->a) < -1e-9 * seg->length()) convex = false;
          } else {
            const auto& arc = std::get<Arc>(piece);
            if (distance(p, arc.center) > arc.radius + 1e-9) convex = false;
          }
        }
      }
      if (!convex) out.push_back({"convexity", name, "boundary is not convex"});
    }

    bool inside = point_in_polygon(pts.front(), poly);
    for (std::size_t side = 0; side < tpl.side_count() && inside; ++side) {
      for (const auto& piece : sc.boundary) {
        if (shapes_intersect(piece, tpl.side(side))) {
          inside = false;
          break;
        }
      }
    }
    if (!inside) out.push_back({"containment", name, "not contained in the open cell"});

    for (std::size_t sj = si + 1; sj < cfg.scatterers.size(); ++sj) {
      const auto& other = cfg.scatterers[sj];
      if (other.boundary.empty()) continue;
      bool overlap = sc.contains(shape_start(other.boundary.front())) ||
                     other.contains(shape_start(sc.boundary.front()));
      for (const auto& a : sc.boundary) {
        for (const auto& b : other.boundary) {
          if (!overlap && shapes_intersect(a, b)) overlap = true;
        }
      }
      if (overlap) {
        out.push_back({"disjointness", name, "intersects scatterer " + std::to_string(sj)});
      }
    }
  }

  for (std::size_t wi = 0; wi < cfg.walls.size(); ++wi) {
    const auto& w = cfg.walls[wi];
    const std::string name = "wall " + std::to_string(wi);
    if (w.length() < 1e-9) {
      out.push_back({"chain", name, "degenerate wall"});
      continue;
    }
    for (int g = 1; g <= 2; ++g) {
      for (std::size_t i = 0; i < tpl.sub_gate_count(); ++i) {
        const auto side = tpl.side(static_cast<std::size_t>(tpl.side_index(g, static_cast<int>(i))));
        if (segments_intersect(w, side, 1e-9)) {
          out.push_back({"gate_crossing", name, "touches gate " + std::to_string(g) + "." + std::to_string(i)});
        }
      }
    }
    const Vec2 mid = w.point_at(0.5);
    if (!point_in_polygon(mid, poly)) out.push_back({"containment", name, "outside the cell"});
    for (std::size_t si = 0; si < cfg.scatterers.size(); ++si) {
      bool hit = false;
      for (const auto& piece : cfg.scatterers[si].boundary) hit = hit || shapes_intersect(piece, w);
      if (hit || (!cfg.scatterers[si].boundary.empty() && cfg.scatterers[si].contains(mid))) {
        out.push_back({"disjointness", name, "meets scatterer " + std::to_string(si)});
      }
    }
  }
  return out;
}

class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(std::vector<Violation> v)
      : std::runtime_error(describe(v)), violations_(std::move(v)) {}
  const std::vector<Violation>& violations() const { return violations_; }

 private:
  static std::string describe(const std::vector<Violation>& v) {
    std::string s = "invalid cell configuration";
    for (const auto& x : v) s += "; " + x.constraint + " (" + x.primitive + "): " + x.detail;
    return s;
  }
  std::vector<Violation> violations_;
};

/// Adds flat shaping walls to `base`. Walls that touch a gate are rejected.
inline CellConfig shaped_cell(const CellTemplate& tpl, const std::vector<Segment>& shape_walls,
                              CellConfig base = {}) {
  for (const auto& w : shape_walls) base.walls.push_back(w);
  std::vector<Violation> bad;
  for (auto& v : validate_config(base, tpl, ConfigBounds{1 << 20, 1 << 20, 0.0})) {
    if (v.primitive.rfind("wall", 0) == 0) bad.push_back(std::move(v));
  }
  if (!bad.empty()) throw ConfigError(std::move(bad));
  return base;
}

// ---------------------------------------------------------------------------

enum class PieceRole : std::uint8_t { gate, wall, scatterer, shape_wall };

struct PieceInfo {
  PieceRole role{PieceRole::wall};
  int gate{0};   // 1/2 for two-gate cells, slot number for congruent-side cells
  int sub{0};
  int owner{-1};  // scatterer or wall index
};

/**
 * Flat list of boundary pieces for one cell in its local frame. Polygon side
 * k always has piece id k; scatterer pieces and shaping walls follow.
 */
class CellGeometry {
 public:
  /// `gate_of_side[k]` is (gate, sub) for gate sides, (0, 0) for walls.
  static CellGeometry compile(const std::vector<Vec2>& polygon,
                              const std::vector<std::pair<int, int>>& gate_of_side,
                              const CellConfig& cfg) {
    CellGeometry g;
    const auto n = polygon.size();
    for (std::size_t k = 0; k < n; ++k) {
      const Segment s{polygon[k], polygon[(k + 1) % n]};
      const auto [gate, sub] = gate_of_side[k];
      if (gate != 0) {
        g.add(PieceKind::gate, s, {PieceRole::gate, gate, sub, -1});
      } else {
        g.add(PieceKind::flat, s, {PieceRole::wall, 0, 0, -1});
      }
    }
    for (std::size_t si = 0; si < cfg.scatterers.size(); ++si) {
      for (const auto& piece : cfg.scatterers[si].boundary) {
        const auto kind = std::holds_alternative<Arc>(piece) ? PieceKind::curved : PieceKind::flat;
        g.add(kind, piece, {PieceRole::scatterer, 0, 0, static_cast<int>(si)});
      }
    }
    for (std::size_t wi = 0; wi < cfg.walls.size(); ++wi) {
      g.add(PieceKind::flat, cfg.walls[wi], {PieceRole::shape_wall, 0, 0, static_cast<int>(wi)});
    }
    return g;
  }

  static CellGeometry compile(const CellTemplate& tpl, const CellConfig& cfg) {
    std::vector<std::pair<int, int>> roles(tpl.side_count(), {0, 0});
    for (std::size_t i = 0; i < tpl.sub_gate_count(); ++i) {
      roles[static_cast<std::size_t>(tpl.gate1_sides()[i])] = {1, static_cast<int>(i)};
      roles[static_cast<std::size_t>(tpl.gate2_sides()[i])] = {2, static_cast<int>(i)};
    }
    return compile(tpl.vertices(), roles, cfg);
  }

  std::span<const IdentifiedPiece> pieces() const { return pieces_; }
  const PieceInfo& info(PieceId id) const { return info_[id]; }
  const Shape& shape(PieceId id) const { return pieces_[id].shape; }

  std::vector<PieceId> curved_pieces() const {
    std::vector<PieceId> out;
    for (const auto& p : pieces_) {
      if (p.kind == PieceKind::curved) out.push_back(p.id);
    }
    return out;
  }

 private:
  void add(PieceKind kind, Shape s, PieceInfo info) {
    const auto id = static_cast<PieceId>(pieces_.size());
    pieces_.push_back({id, kind, std::move(s)});
    info_.push_back(info);
  }

  std::vector<IdentifiedPiece> pieces_;
  std::vector<PieceInfo> info_;
};

}  // namespace qtube
