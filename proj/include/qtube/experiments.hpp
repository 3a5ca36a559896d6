#pragma once
/**
 * @file experiments.hpp
 * @brief Monte Carlo recurrence statistics for a fixed (quenched) tube.
 *
 * Orbits start from mu0 on the gates of cell 0 and follow the particle's point
 * of view map. A return is a zero of the exit cocycle S_n, i.e. the particle
 * is back on the cross section of its starting cell. Per orbit only S_n on a
 * log grid, the first return time and the singular step are kept; all
 * aggregates are integer sums, so results do not depend on scheduling.
 */

#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <optional>
#include <vector>

#include "qtube/dynamics.hpp"
#include "qtube/measure.hpp"
#include "qtube/parallel.hpp"
#include "qtube/process.hpp"

namespace qtube {

/// {10, 100, ...} up to `horizon`, with `horizon` itself appended if it is
/// not a power of ten.
inline std::vector<std::int64_t> log_grid(std::int64_t horizon) {
  std::vector<std::int64_t> g;
  for (std::int64_t n = 10; n <= horizon; n *= 10) g.push_back(n);
  if (g.empty() || g.back() != horizon) g.push_back(horizon);
  return g;
}

struct OrbitSummary {
  OrbitStatus status{OrbitStatus::ok};
  std::int64_t steps{0};           // completed crossings
  std::int64_t first_return{-1};   // -1: no return within the run
  std::vector<std::int64_t> s_at_grid;  // S_n at each grid point reached
};

struct RecurrenceOptions {
  std::int64_t orbits{1000};
  std::int64_t horizon{100000};
  int cap{kDefaultCap};
  int workers{1};
  std::uint64_t sample_seed{1};
  std::vector<double> rho{0.01, 0.05, 0.1, 0.2, 0.5, 1.0};
};

struct HistogramBin {
  std::int64_t lo{0};  // inclusive
  std::int64_t hi{0};  // exclusive
  std::int64_t count{0};
};

struct QnPoint {
  std::int64_t n{0};
  double rho{0.0};
  double q{0.0};
};

struct QnCurve {
  std::vector<QnPoint> points;
  double kappa_hat{0.0};
};

struct RecurrenceStats {
  std::int64_t orbits{0};
  std::int64_t returned{0};
  std::int64_t singular{0};
  std::int64_t horizon{0};
  double return_fraction{0.0};
  std::vector<HistogramBin> return_time_histogram;
  std::vector<std::int64_t> grid;
  std::vector<std::pair<std::int64_t, double>> birkhoff_curve;  // (n, mean |S_n / n|)
  QnCurve qn_curve;
  std::vector<OrbitSummary> per_orbit;

  /// Fraction of orbits, among those still regular at step h, that returned by step h.
  double return_fraction_at(std::int64_t h) const {
    std::int64_t live = 0, ret = 0;
    for (const auto& o : per_orbit) {
      if (o.status != OrbitStatus::ok && o.steps < h) continue;
      ++live;
      if (o.first_return >= 1 && o.first_return <= h) ++ret;
    }
    return live ? static_cast<double>(ret) / static_cast<double>(live) : 0.0;
  }
};

inline OrbitSummary run_orbit_summary(const TubeRealization& tube, const PhasePoint& x0, std::int64_t horizon,
                                      const std::vector<std::int64_t>& grid, int cap) {
  OrbitSummary out;
  out.s_at_grid.reserve(grid.size());
  PovState state{x0, 0, &tube};
  std::size_t next_grid = 0;
  for (std::int64_t k = 1; k <= horizon; ++k) {
    auto [next, r] = pov_step(state, cap);
    if (r.status != OrbitStatus::ok) {
      out.status = r.status;
      break;
    }
    state = next;
    out.steps = k;
    if (state.shift_offset == 0 && out.first_return < 0) out.first_return = k;
    if (next_grid < grid.size() && grid[next_grid] == k) {
      out.s_at_grid.push_back(state.shift_offset);
      ++next_grid;
    }
  }
  return out;
}

/// Q_n([-rho, rho]) for the law of S_n / n^{1/nu} over regular orbits.
/// kappa_hat is the minimum of Q_n / rho^nu over grid points with Q_n < 1.
inline QnCurve schmidt_estimator(const std::vector<OrbitSummary>& orbits, const std::vector<std::int64_t>& grid,
                                 const std::vector<double>& rho_list, double nu = 1.0) {
  QnCurve c;
  double kappa = std::numeric_limits<double>::infinity();
  double kappa_all = std::numeric_limits<double>::infinity();
  for (std::size_t gi = 0; gi < grid.size(); ++gi) {
    const double scale = std::pow(static_cast<double>(grid[gi]), 1.0 / nu);
    for (double rho : rho_list) {
      std::int64_t total = 0, inside = 0;
      for (const auto& o : orbits) {
        if (o.status != OrbitStatus::ok || o.s_at_grid.size() <= gi) continue;
        ++total;
        const double s = static_cast<double>(std::llabs(o.s_at_grid[gi]));
        if (s <= rho * scale * (1.0 + 1e-12)) ++inside;
      }
      const double q = total ? static_cast<double>(inside) / static_cast<double>(total) : 0.0;
      c.points.push_back({grid[gi], rho, q});
      if (rho > 0.0) {
        const double ratio = q / std::pow(rho, nu);
        kappa_all = std::min(kappa_all, ratio);
        if (q < 1.0) kappa = std::min(kappa, ratio);
      }
    }
  }
  c.kappa_hat = std::isfinite(kappa) ? kappa : (std::isfinite(kappa_all) ? kappa_all : 0.0);
  return c;
}

inline std::vector<HistogramBin> return_time_histogram(const std::vector<OrbitSummary>& orbits,
                                                       std::int64_t horizon) {
  std::vector<HistogramBin> bins;
  for (std::int64_t lo = 1; lo <= horizon; lo *= 2) bins.push_back({lo, lo * 2, 0});
  for (const auto& o : orbits) {
    if (o.status != OrbitStatus::ok || o.first_return < 1) continue;
    for (auto& b : bins) {
      if (o.first_return >= b.lo && o.first_return < b.hi) {
        ++b.count;
        break;
      }
    }
  }
  return bins;
}

/// Aggregates per-orbit summaries; split out so stored summaries can be re-aggregated.
inline RecurrenceStats aggregate(std::vector<OrbitSummary> per_orbit, std::int64_t horizon,
                                 const std::vector<double>& rho) {
  RecurrenceStats st;
  st.horizon = horizon;
  st.grid = log_grid(horizon);
  st.orbits = static_cast<std::int64_t>(per_orbit.size());
  std::vector<std::int64_t> abs_sum(st.grid.size(), 0);
  std::int64_t regular = 0;
  for (const auto& o : per_orbit) {
    if (o.status != OrbitStatus::ok) {
      ++st.singular;
      continue;
    }
    ++regular;
    if (o.first_return >= 1) ++st.returned;
    for (std::size_t i = 0; i < st.grid.size() && i < o.s_at_grid.size(); ++i) {
      abs_sum[i] += std::llabs(o.s_at_grid[i]);
    }
  }
  st.return_fraction = regular ? static_cast<double>(st.returned) / static_cast<double>(regular) : 0.0;
  for (std::size_t i = 0; i < st.grid.size(); ++i) {
    const double mean = regular ? static_cast<double>(abs_sum[i]) /
                                      (static_cast<double>(regular) * static_cast<double>(st.grid[i]))
                                : 0.0;
    st.birkhoff_curve.emplace_back(st.grid[i], mean);
  }
  st.return_time_histogram = return_time_histogram(per_orbit, horizon);
  st.qn_curve = schmidt_estimator(per_orbit, st.grid, rho);
  st.per_orbit = std::move(per_orbit);
  return st;
}

inline RecurrenceStats recurrence_experiment(const TubeRealization& tube, const RecurrenceOptions& opt) {
  if (opt.orbits < 1 || opt.horizon < 1) throw std::invalid_argument("recurrence: budgets must be positive");
  const Mu0Sampler sampler{&tube.cell_template(), opt.sample_seed, Stream::mu0};
  const auto grid = log_grid(opt.horizon);
  std::vector<OrbitSummary> per_orbit(static_cast<std::size_t>(opt.orbits));
  parallel_for(opt.orbits, opt.workers, [&](std::int64_t i) {
    per_orbit[static_cast<std::size_t>(i)] = run_orbit_summary(tube, sampler(i), opt.horizon, grid, opt.cap);
  });
  return aggregate(std::move(per_orbit), opt.horizon, opt.rho);
}

}  // namespace qtube
