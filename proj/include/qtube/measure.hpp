#pragma once
// Sampling from the normalized flux measure mu0 = (v.o) dq dv on the gates of
// cell 0: position uniform in arc length over all gate sides, angle theta to
// the inner normal with density cos(theta)/2, i.e. theta = asin(2u - 1).

#include <cmath>
#include <cstdint>
#include <vector>

#include "qtube/cell.hpp"
#include "qtube/dynamics.hpp"
#include "qtube/rng.hpp"

namespace qtube {

/// Inverse CDF of the cos(theta)/2 law on (-pi/2, pi/2).
inline double angle_from_uniform(double u) { return std::asin(2.0 * u - 1.0); }

/// Inward unit velocity at angle theta from the inner normal (positive
/// angles lean along the side's tangent).
inline UnitVec2 inward_velocity(const GateFrame& f, double theta) {
  return UnitVec2::unchecked(f.inner_normal.vec() * std::cos(theta) + f.tangent.vec() * std::sin(theta));
}

/// Sample on one specific gate side.
inline PhasePoint sample_on_gate(const CellTemplate& tpl, int gate, int sub, KeyedRng& rng) {
  const GateFrame f = tpl.gate_frame(gate, sub);
  const double u = rng.uniform() * f.length;
  // Keep the angle strictly inside (-pi/2, pi/2).
  double w = rng.uniform();
  while (w == 0.0) w = rng.uniform();
  return {gate, sub, u, inward_velocity(f, angle_from_uniform(w))};
}

struct Mu0Sampler {
  const CellTemplate* tpl{nullptr};
  std::uint64_t seed{0};
  Stream stream{Stream::mu0};

  /// i-th sample; a pure function of (template, seed, stream, i).
  PhasePoint operator()(std::int64_t i) const {
    KeyedRng rng(seed, stream, i);
    double pick = rng.uniform() * 2.0 * tpl->gate_length();
    for (int gate = 1; gate <= 2; ++gate) {
      for (std::size_t sub = 0; sub < tpl->sub_gate_count(); ++sub) {
        const double len = tpl->gate_frame(gate, static_cast<int>(sub)).length;
        if (pick < len || (gate == 2 && sub + 1 == tpl->sub_gate_count())) {
          return sample_on_gate(*tpl, gate, static_cast<int>(sub), rng);
        }
        pick -= len;
      }
    }
    return {};
  }
};

inline std::vector<PhasePoint> sample_mu0(const Mu0Sampler& sampler, std::int64_t count) {
  std::vector<PhasePoint> out;
  out.reserve(static_cast<std::size_t>(count));
  for (std::int64_t i = 0; i < count; ++i) out.push_back(sampler(i));
  return out;
}

/// Coordinates of a gate pair in which mu0 is uniform: global arc-length
/// position over gate 1 then gate 2 (range [0, 2 * gate_length)), and
/// sin(theta) in (-1, 1).
struct FluxCoordinates {
  double arc{0.0};
  double sin_theta{0.0};
};

inline FluxCoordinates flux_coordinates(const PhasePoint& x, const CellTemplate& tpl) {
  double offset = x.gate == 2 ? tpl.gate_length() : 0.0;
  for (int s = 0; s < x.sub; ++s) offset += tpl.gate_frame(x.gate, s).length;
  const GateFrame f = tpl.gate_frame(x.gate, x.sub);
  return {offset + x.u, dot(x.v.vec(), f.tangent.vec())};
}

}  // namespace qtube
