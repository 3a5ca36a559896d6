#pragma once
/**
 * @file dynamics.hpp
 * @brief Cell traversal map R with exit function e, the particle's point of
 *        view step F, the tube's gate-crossing map T and the exit cocycle.
 *
 * A PhasePoint lives on a gate side of cell 0: (gate, sub, u, v) with u the
 * arc length along the side in polygon order and v pointing into the cell.
 * Traversal flies the particle through the cell, reflecting specularly on
 * walls and scatterers, until it crosses a gate. The image is pulled back to
 * cell 0 by tau^{-e}: a crossing of gate 2 at u becomes an entry through
 * gate 1 at L - u, and vice versa. Tangential and vertex hits end the orbit.
 */

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <utility>
#include <vector>

#include "qtube/cell.hpp"
#include "qtube/geometry.hpp"
#include "qtube/process.hpp"

namespace qtube {

struct PhasePoint {
  int gate{1};
  int sub{0};
  double u{0.0};
  UnitVec2 v;
};

enum class OrbitStatus : std::uint8_t { ok, singular_tangency, singular_vertex, cap_exceeded };

inline const char* to_string(OrbitStatus s) {
  switch (s) {
    case OrbitStatus::ok: return "ok";
    case OrbitStatus::singular_tangency: return "singular_tangency";
    case OrbitStatus::singular_vertex: return "singular_vertex";
    case OrbitStatus::cap_exceeded: return "cap_exceeded";
  }
  return "?";
}

inline constexpr int kDefaultCap = 10000;

struct TraversalResult {
  PhasePoint exit;       // image in cell-0 coordinates
  PhasePoint crossing;   // crossed gate side, u on it, outgoing velocity
  int e{0};
  double flight_time{0.0};
  int collisions{0};
  int flat_collisions_between_curved{0};  // longest run of flat bounces
  std::optional<double> gamma_first_curved;
  OrbitStatus status{OrbitStatus::ok};
};

namespace detail {

enum class FlightEnd : std::uint8_t { gate, curved, singular_tangency, singular_vertex, cap };

struct Flight {
  FlightEnd end{FlightEnd::gate};
  HitRecord last;       // gate or curved hit that ended the flight
  UnitVec2 velocity;    // velocity when the flight ended (pre-collision at a curved stop)
  double time{0.0};
  int collisions{0};
  int flat_run{0};      // current run of flat collisions since the last curved one
  int max_flat_run{0};
  std::optional<double> gamma;
};

/**
 * Event loop inside one cell: from `origin` along `dir`, leaving piece
 * `exclude`. Stops at the first gate crossing, or (if `stop_on_curved`) at the
 * first curved hit before reflecting on it.
 */
inline Flight fly(const CellGeometry& geom, Vec2 origin, UnitVec2 dir, PieceId exclude, int cap,
                  bool stop_on_curved) {
  Flight f;
  for (;;) {
    const auto hit = first_hit(origin, dir, geom.pieces(), exclude);
    if (!hit) {
      // Leaving a closed polygon without a hit means slipping through a corner.
      f.end = FlightEnd::singular_vertex;
      f.velocity = dir;
      return f;
    }
    f.time += hit->t;
    f.last = *hit;
    f.velocity = dir;
    if (hit->flag == HitFlag::vertex) {
      f.end = FlightEnd::singular_vertex;
      return f;
    }
    if (hit->flag == HitFlag::tangential) {
      f.end = FlightEnd::singular_tangency;
      return f;
    }
    if (hit->kind == PieceKind::gate) {
      f.end = FlightEnd::gate;
      return f;
    }
    if (hit->kind == PieceKind::curved) {
      if (!f.gamma) f.gamma = f.time;
      f.flat_run = 0;
      if (stop_on_curved) {
        f.end = FlightEnd::curved;
        return f;
      }
    } else {
      f.max_flat_run = std::max(f.max_flat_run, ++f.flat_run);
    }
    if (++f.collisions > cap) {
      f.end = FlightEnd::cap;
      return f;
    }
    const auto reflected = reflect(dir, hit->normal);
    if (!reflected) {
      f.end = FlightEnd::singular_tangency;
      return f;
    }
    dir = *reflected;
    origin = hit->point;
    exclude = hit->piece_id;
  }
}

inline OrbitStatus status_of(FlightEnd end) {
  switch (end) {
    case FlightEnd::singular_tangency: return OrbitStatus::singular_tangency;
    case FlightEnd::singular_vertex: return OrbitStatus::singular_vertex;
    case FlightEnd::cap: return OrbitStatus::cap_exceeded;
    default: return OrbitStatus::ok;
  }
}

inline void require_inward(const PhasePoint& x, const GateFrame& frame) {
  if (!(dot(x.v.vec(), frame.inner_normal.vec()) > 0.0)) {
    throw std::invalid_argument("phase point: velocity must point into the cell");
  }
}

}  // namespace detail

/// Position of a phase point in cell-local coordinates.
inline Vec2 position(const PhasePoint& x, const CellTemplate& tpl) {
  return tpl.gate_frame(x.gate, x.sub).point(x.u);
}

/// Cell traversal R_omega on precompiled geometry.
inline TraversalResult traverse(const PhasePoint& x, const CellGeometry& geom, const CellTemplate& tpl,
                                int cap = kDefaultCap) {
  const GateFrame entry = tpl.gate_frame(x.gate, x.sub);
  detail::require_inward(x, entry);
  const auto entry_side = static_cast<PieceId>(tpl.side_index(x.gate, x.sub));
  const auto f = detail::fly(geom, entry.point(x.u), x.v, entry_side, cap, false);

  TraversalResult r;
  r.flight_time = f.time;
  r.collisions = std::min(f.collisions, cap + 1);
  r.flat_collisions_between_curved = f.max_flat_run;
  r.gamma_first_curved = f.gamma;
  r.status = detail::status_of(f.end);
  if (r.status != OrbitStatus::ok) return r;

  const auto& info = geom.info(f.last.piece_id);
  const GateFrame out = tpl.gate_frame(info.gate, info.sub);
  const double u = out.coordinate(f.last.point);
  r.crossing = {info.gate, info.sub, u, f.velocity};
  r.e = info.gate == 2 ? +1 : -1;
  r.exit = {info.gate == 2 ? 1 : 2, info.sub, out.length - u, f.velocity};
  return r;
}

inline TraversalResult traverse_cell(const PhasePoint& x, const CellConfig& cfg, const CellTemplate& tpl,
                                     int cap = kDefaultCap) {
  return traverse(x, CellGeometry::compile(tpl, cfg), tpl, cap);
}

/// The phase point obtained by reversing the velocity at the crossing of a
/// traversal: it enters the same cell through the crossed gate side.
inline PhasePoint reversed_crossing(const TraversalResult& r) {
  return {r.crossing.gate, r.crossing.sub, r.crossing.u, -r.crossing.v};
}

// ---------------------------------------------------------------------------
// Point of view of the particle

/// State of F on Sigma = N x Omega^Z. The tube seen by the particle is the
/// realization shifted by `shift_offset`, so its cell 0 is cell(shift_offset).
struct PovState {
  PhasePoint x;
  std::int64_t shift_offset{0};
  const TubeRealization* realization{nullptr};
};

inline std::pair<PovState, TraversalResult> pov_step(const PovState& s, int cap = kDefaultCap) {
  const auto& tube = *s.realization;
  auto r = traverse(s.x, tube.geometry(s.shift_offset), tube.cell_template(), cap);
  PovState next = s;
  if (r.status == OrbitStatus::ok) {
    next.x = r.exit;
    next.shift_offset += r.e;
  }
  return {next, r};
}

// ---------------------------------------------------------------------------
// Gate-crossing map of a fixed tube

/// Point of the tube cross section: a phase point on a gate of cell `cell`,
/// stored in that cell's local frame (absolute position = local + cell * tau).
struct TubePoint {
  std::int64_t cell{0};
  PhasePoint x;
};

inline Vec2 absolute_position(const TubePoint& p, const CellTemplate& tpl) {
  return position(p.x, tpl) + tpl.tau() * static_cast<double>(p.cell);
}

struct TubeStep {
  TubePoint next;
  TraversalResult result;
};

/// T_l: from a point entering cell n, the next gate crossing, expressed as a
/// point entering cell n + e.
inline TubeStep tube_map_T(const TubePoint& p, const TubeRealization& tube, int cap = kDefaultCap) {
  const auto& tpl = tube.cell_template();
  TubeStep step{p, traverse(p.x, tube.geometry(p.cell), tpl, cap)};
  const auto& r = step.result;
  if (r.status != OrbitStatus::ok) return step;
  // The crossed side of cell n is the opposite gate of cell n + e.
  const GateFrame crossed = tpl.gate_frame(r.crossing.gate, r.crossing.sub);
  step.next.cell = p.cell + r.e;
  step.next.x = {r.crossing.gate == 2 ? 1 : 2, r.crossing.sub, crossed.length - r.crossing.u, r.crossing.v};
  return step;
}

/// Time reversal on the tube cross section: the same gate point with the
/// velocity flipped, now entering the neighbouring cell it came from.
inline TubePoint reverse(const TubePoint& p, const CellTemplate& tpl) {
  const GateFrame f = tpl.gate_frame(p.x.gate, p.x.sub);
  return {p.cell + (p.x.gate == 1 ? -1 : +1),
          {p.x.gate == 1 ? 2 : 1, p.x.sub, f.length - p.x.u, -p.x.v}};
}

// ---------------------------------------------------------------------------
// Exit cocycle

struct CocycleTrace {
  std::vector<int> exits;                   // e_0, e_1, ...
  std::vector<std::int64_t> partial_sums;   // S_1, S_2, ... (S_0 = 0 implicit)
  std::optional<std::int64_t> first_return;  // least n >= 1 with S_n = 0
  OrbitStatus status{OrbitStatus::ok};
};

inline void push_exit(CocycleTrace& t, int e) {
  const std::int64_t s = (t.partial_sums.empty() ? 0 : t.partial_sums.back()) + e;
  t.exits.push_back(e);
  t.partial_sums.push_back(s);
  if (s == 0 && !t.first_return) t.first_return = static_cast<std::int64_t>(t.partial_sums.size());
}

inline CocycleTrace accumulate_cocycle(std::span<const int> exits) {
  CocycleTrace t;
  for (int e : exits) push_exit(t, e);
  return t;
}

/// Iterates F up to `horizon` times or until the orbit becomes singular.
inline CocycleTrace run_cocycle(PovState state, std::int64_t horizon, int cap = kDefaultCap) {
  if (horizon < 1) throw std::invalid_argument("run_cocycle: horizon must be >= 1");
  CocycleTrace t;
  t.exits.reserve(static_cast<std::size_t>(std::min<std::int64_t>(horizon, 1 << 20)));
  t.partial_sums.reserve(t.exits.capacity());
  for (std::int64_t k = 0; k < horizon; ++k) {
    auto [next, r] = pov_step(state, cap);
    if (r.status != OrbitStatus::ok) {
      t.status = r.status;
      break;
    }
    push_exit(t, r.e);
    state = next;
  }
  return t;
}

}  // namespace qtube
