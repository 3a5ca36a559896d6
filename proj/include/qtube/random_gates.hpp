#pragma once
/**
 * @file random_gates.hpp
 * @brief Cells whose gates are chosen at random among p congruent sides.
 *
 * Each cell parameter picks the left and right gate slots j1 != j2 and a flip
 * flag saying whether the next cell is glued with reversed orientation.
 * Hitting any other congruent side is an ordinary bounce and ends the step
 * with e = 0.
 */

#include <stdexcept>
#include <vector>

#include "qtube/dynamics.hpp"

namespace qtube {

class RandomGateTemplate {
 public:
  RandomGateTemplate(std::vector<Vec2> vertices, std::vector<int> congruent_sides)
      : vertices_(std::move(vertices)), sides_(std::move(congruent_sides)) {
    if (sides_.size() < 2) throw std::invalid_argument("random gates: need p >= 2 congruent sides");
    if (!polygon_is_simple(vertices_) || signed_area(vertices_) <= 0.0) {
      throw std::invalid_argument("random gates: polygon must be simple and counter-clockwise");
    }
    const int n = static_cast<int>(vertices_.size());
    for (int s : sides_) {
      if (s < 0 || s >= n) throw std::invalid_argument("random gates: side index out of range");
    }
    length_ = side(1).length();
    for (int j = 2; j <= slots(); ++j) {
      if (std::abs(side(j).length() - length_) > 1e-9) {
        throw std::invalid_argument("random gates: sides are not congruent");
      }
    }
  }

  int slots() const { return static_cast<int>(sides_.size()); }
  double side_length() const { return length_; }
  const std::vector<Vec2>& vertices() const { return vertices_; }

  /// Side for slot j in 1..p.
  Segment side(int j) const {
    const auto k = static_cast<std::size_t>(sides_.at(static_cast<std::size_t>(j - 1)));
    return {vertices_[k], vertices_[(k + 1) % vertices_.size()]};
  }
  PieceId side_piece(int j) const { return static_cast<PieceId>(sides_.at(static_cast<std::size_t>(j - 1))); }
  GateFrame frame(int j) const {
    const Segment s = side(j);
    return make_side_frame(s.a, s.b);
  }

  CellGeometry compile(const CellConfig& cfg) const {
    std::vector<std::pair<int, int>> roles(vertices_.size(), {0, 0});
    for (int j = 1; j <= slots(); ++j) roles[side_piece(j)] = {j, 0};
    return CellGeometry::compile(vertices_, roles, cfg);
  }

 private:
  std::vector<Vec2> vertices_;
  std::vector<int> sides_;
  double length_{0.0};
};

/// Cell parameter omega: gate selectors, orientation flip and scatterers.
struct RandomGateCell {
  int j1{1};
  int j2{2};
  bool flip{false};
  CellConfig config;
};

/// Rigid map taking an outgoing pair on slot `from` onto the incoming pair on
/// slot `to` of the neighbouring cell.
inline PhasePoint glue_sides(const RandomGateTemplate& tpl, int from, double u, UnitVec2 v, int to) {
  const GateFrame a = tpl.frame(from);
  const GateFrame b = tpl.frame(to);
  const double along = dot(v.vec(), a.tangent.vec());
  const double normal = dot(v.vec(), a.inner_normal.vec());
  const Vec2 w = b.tangent.vec() * (-along) + b.inner_normal.vec() * (-normal);
  return {to, 0, tpl.side_length() - u, UnitVec2::unchecked(w)};
}

/// Orientation flip xi on an incoming pair: mirror u about the side midpoint
/// and negate the tangential velocity.
inline PhasePoint flip_side(const RandomGateTemplate& tpl, const PhasePoint& x) {
  const GateFrame f = tpl.frame(x.gate);
  const double along = dot(x.v.vec(), f.tangent.vec());
  const double normal = dot(x.v.vec(), f.inner_normal.vec());
  const Vec2 w = f.tangent.vec() * (-along) + f.inner_normal.vec() * normal;
  return {x.gate, 0, tpl.side_length() - x.u, UnitVec2::unchecked(w)};
}

/**
 * One step of the random-gates map. `x.gate` is the slot the particle enters
 * through. Exits through j2(cur) go to the next cell (e = +1), exits through
 * j1(cur) to the previous one (e = -1); any other congruent side reflects
 * with v2 = v1 - 2 (v1.o) o and e = 0.
 */
inline TraversalResult traverse_random_gates(const PhasePoint& x, const RandomGateCell& prev,
                                             const RandomGateCell& cur, const RandomGateCell& next,
                                             const RandomGateTemplate& tpl, int cap = kDefaultCap) {
  if (cur.j1 == cur.j2) throw std::invalid_argument("random gates: j1 must differ from j2");
  const GateFrame entry = tpl.frame(x.gate);
  detail::require_inward(x, entry);
  const CellGeometry geom = tpl.compile(cur.config);
  const auto f = detail::fly(geom, entry.point(x.u), x.v, tpl.side_piece(x.gate), cap, false);

  TraversalResult r;
  r.flight_time = f.time;
  r.collisions = std::min(f.collisions, cap + 1);
  r.flat_collisions_between_curved = f.max_flat_run;
  r.gamma_first_curved = f.gamma;
  r.status = detail::status_of(f.end);
  if (r.status != OrbitStatus::ok) return r;

  const int j = geom.info(f.last.piece_id).gate;
  const GateFrame side = tpl.frame(j);
  const double u = side.coordinate(f.last.point);
  r.crossing = {j, 0, u, f.velocity};
  if (j == cur.j2) {
    PhasePoint y = glue_sides(tpl, j, u, f.velocity, next.j1);
    r.exit = cur.flip ? flip_side(tpl, y) : y;
    r.e = +1;
  } else if (j == cur.j1) {
    PhasePoint y = glue_sides(tpl, j, u, f.velocity, prev.j2);
    r.exit = prev.flip ? flip_side(tpl, y) : y;
    r.e = -1;
  } else {
    const Vec2 o = side.inner_normal.vec();
    const Vec2 v1 = f.velocity.vec();
    r.exit = {j, 0, u, UnitVec2::unchecked(v1 - o * (2.0 * dot(v1, o)))};
    r.e = 0;
  }
  return r;
}

}  // namespace qtube
