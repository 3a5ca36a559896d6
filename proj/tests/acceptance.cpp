// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails. Uses the shipped specs under configs/.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "oracles.hpp"
#include "qtube/io.hpp"

using namespace qtube;
namespace fs = std::filesystem;

namespace {

struct Verdict {
  bool pass{false};
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

ExperimentSpec shipped(const std::string& name) {
  return load_spec(fs::path(QTUBE_SOURCE_DIR) / "configs" / (name + ".json"));
}

int hardware_workers() { return std::max(1, static_cast<int>(std::thread::hardware_concurrency())); }

std::string num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

// ---------------------------------------------------------------------------

Verdict geometry_kernel() {
  const auto t0 = Clock::now();
  std::mt19937_64 gen(7);
  std::uniform_real_distribution<double> c(-2, 2), ang(0, 2 * M_PI), rad(0.1, 1.0);
  int cases = 0, hits = 0, disagree = 0;
  double worst = 0.0;
  while (cases < 1000) {
    const Vec2 o{c(gen), c(gen)};
    const Vec2 target{c(gen), c(gen)};
    const bool aimed = cases % 3 != 0;
    std::optional<double> want;
    std::optional<HitRecord> got;
    if (cases % 2 == 0) {
      const Segment s{{c(gen), c(gen)}, {c(gen), c(gen)}};
      const Vec2 aim = shape_point(Shape{s}, 0.3 * target.x + 0.5);
      const UnitVec2 d = aimed && distance(aim, o) > 1e-6 ? UnitVec2::from_normalized(aim - o)
                                                         : UnitVec2::from_angle(ang(gen));
      want = oracle::segment_time(o, d.vec(), s);
      got = intersect_ray_segment(o, d, s);
    } else {
      Arc a{{c(gen), c(gen)}, rad(gen), ang(gen), ang(gen)};
      if (cases % 4 == 1) a.angle_span = kTwoPi;
      if (distance(o, a.center) <= a.radius) continue;
      const UnitVec2 d = aimed ? UnitVec2::from_normalized(a.center - o + 0.5 * a.radius * target)
                               : UnitVec2::from_angle(ang(gen));
      want = oracle::arc_time(o, d.vec(), a);
      got = intersect_ray_arc(o, d, a);
    }
    ++cases;
    if (want.has_value() != got.has_value()) {
      ++disagree;
      continue;
    }
    if (want) {
      ++hits;
      worst = std::max(worst, std::abs(got->t - *want));
    }
  }
  double norm_err = 0.0, invol_err = 0.0;
  int reflections = 0;
  for (int i = 0; i < 10000; ++i) {
    const auto v = UnitVec2::from_angle(ang(gen));
    const auto n = UnitVec2::from_angle(ang(gen));
    const auto r = reflect(v, n);
    if (!r) continue;
    ++reflections;
    norm_err = std::max(norm_err, std::abs(norm(r->vec()) - 1.0));
    const auto back = reflect(*r, n);
    invol_err = std::max(invol_err, norm(back->vec() - v.vec()));
  }
  const double secs = seconds_since(t0);
  Verdict out;
  out.pass = disagree == 0 && worst <= 1e-8 && norm_err <= 1e-12 && invol_err <= 1e-12 && secs < 1.0;
  out.detail = std::to_string(cases) + " cases (" + std::to_string(hits) + " hits), hit/miss disagreements " +
               std::to_string(disagree) + ", max |dt| " + num(worst) + "; " + std::to_string(reflections) +
               " reflections, max norm error " + num(norm_err) + ", max involution error " + num(invol_err) +
               "; " + num(secs) + " s";
  return out;
}

Verdict flux_invariance() {
  const auto t0 = Clock::now();
  const auto spec = shipped("periodic_disc_tube");
  const auto tpl = spec.cell.build();
  const auto geom = CellGeometry::compile(tpl, spec.process.library.front());
  const Mu0Sampler sampler{&tpl, spec.seed, Stream::flux};
  std::vector<double> arc, sin_theta;
  int singular = 0;
  for (std::int64_t i = 0; i < 100000; ++i) {
    const auto r = traverse(sampler(i), geom, tpl);
    if (r.status != OrbitStatus::ok) {
      ++singular;
      continue;
    }
    const auto f = flux_coordinates(r.exit, tpl);
    arc.push_back(f.arc);
    sin_theta.push_back(f.sin_theta);
  }
  const double ks_arc = oracle::ks_uniform(arc, 0.0, 2.0 * tpl.gate_length());
  const double ks_sin = oracle::ks_uniform(sin_theta, -1.0, 1.0);
  const double secs = seconds_since(t0);
  return {ks_arc < 0.02 && ks_sin < 0.02 && secs < 30.0,
          "KS arc-length " + num(ks_arc) + ", KS sin(theta) " + num(ks_sin) + " over " +
              std::to_string(arc.size()) + " exits (" + std::to_string(singular) + " singular); " + num(secs) +
              " s"};
}

// Replays one orbit of `length` crossings backwards. Returns the status of
// the round trip and the largest coordinate error at the end.
struct Replay {
  bool singular{false};
  double error{0.0};
};

Replay replay(const TubeRealization& tube, const TubePoint& start, int length) {
  const auto& tpl = tube.cell_template();
  TubePoint p = start;
  for (int k = 0; k < length; ++k) {
    const auto s = tube_map_T(p, tube);
    if (s.result.status != OrbitStatus::ok) return {true, 0.0};
    p = s.next;
  }
  TubePoint q = reverse(p, tpl);
  for (int k = 0; k < length; ++k) {
    const auto s = tube_map_T(q, tube);
    if (s.result.status != OrbitStatus::ok) return {true, 0.0};
    q = s.next;
  }
  const TubePoint back = reverse(q, tpl);
  if (back.cell != start.cell || back.x.gate != start.x.gate || back.x.sub != start.x.sub) {
    return {false, std::numeric_limits<double>::infinity()};
  }
  return {false, std::max({std::abs(back.x.u - start.x.u), std::abs(back.x.v.x() - start.x.v.x()),
                           std::abs(back.x.v.y() - start.x.v.y())})};
}

Verdict time_reversal() {
  const auto spec = shipped("quenched_disc_tube");
  TubeRealization tube(spec.cell.build(), spec.process, spec.seed);
  const Mu0Sampler sampler{&tube.cell_template(), spec.seed, Stream::mu0};
  constexpr int kOrbits = 10000;
  constexpr int kLength = 1000;
  constexpr double kTol = 1e-9;

  // Diagnostic: how the replay fraction decays with orbit length.
  std::printf("  time reversal, fraction replayed within %g (1000 orbits per length):\n", kTol);
  for (int len : {1, 2, 5, 10, 20, 50, 100, 1000}) {
    int ok = 0, regular = 0;
    double median_err = 0.0;
    std::vector<double> errs;
    for (int i = 0; i < 1000; ++i) {
      const auto r = replay(tube, {0, sampler(i)}, len);
      if (r.singular) continue;
      ++regular;
      errs.push_back(r.error);
      if (r.error <= kTol) ++ok;
    }
    std::sort(errs.begin(), errs.end());
    if (!errs.empty()) median_err = errs[errs.size() / 2];
    std::printf("    length %4d: %6.2f%% of %d regular orbits, median error %.3g\n", len,
                100.0 * ok / std::max(regular, 1), regular, median_err);
  }

  int regular = 0, replayed = 0, singular = 0;
  for (int i = 0; i < kOrbits; ++i) {
    const auto r = replay(tube, {0, sampler(i)}, kLength);
    if (r.singular) {
      ++singular;
      continue;
    }
    ++regular;
    if (r.error <= kTol) ++replayed;
  }
  const double frac = regular ? static_cast<double>(replayed) / regular : 0.0;
  return {frac >= 0.999,
          std::to_string(replayed) + " of " + std::to_string(regular) + " regular orbits of length " +
              std::to_string(kLength) + " replay within 1e-9 (" + num(100 * frac) + "%), " +
              std::to_string(singular) + " flagged singular; " + std::to_string(regular - replayed) +
              " neither (chaotic error growth in double precision)"};
}

Verdict conjugacy() {
  const auto spec = shipped("quenched_disc_tube");
  TubeRealization tube(spec.cell.build(), spec.process, spec.seed);
  const Mu0Sampler sampler{&tube.cell_template(), spec.seed, Stream::mu0};
  int mismatches = 0, singular = 0;
  std::int64_t compared = 0;
  for (int i = 0; i < 1000; ++i) {
    PovState pov{sampler(i), 0, &tube};
    TubePoint tp{0, sampler(i)};
    for (int k = 0; k < 1000; ++k) {
      const auto [next, r] = pov_step(pov);
      const auto s = tube_map_T(tp, tube);
      if (r.status != s.result.status) {
        ++mismatches;
        break;
      }
      if (r.status != OrbitStatus::ok) {
        ++singular;
        break;
      }
      ++compared;
      const bool same = r.e == s.result.e && next.shift_offset == s.next.cell && next.x.gate == s.next.x.gate &&
                        next.x.sub == s.next.x.sub && next.x.u == s.next.x.u && next.x.v == s.next.x.v;
      if (!same) {
        ++mismatches;
        break;
      }
      pov = next;
      tp = s.next;
    }
  }
  return {mismatches == 0 && compared > 0,
          std::to_string(compared) + " crossings compared over 1000 orbits, " + std::to_string(mismatches) +
              " mismatches, " + std::to_string(singular) + " orbits stopped singular (in both)"};
}

Verdict negative_control() {
  const auto spec = shipped("empty_channel");
  TubeRealization tube(spec.cell.build(), spec.process, spec.seed);
  auto o = detail::recurrence_options(spec, spec.seed, hardware_workers());
  const auto st = recurrence_experiment(tube, o);
  bool birkhoff_one = true;
  for (const auto& [n, m] : st.birkhoff_curve) birkhoff_one = birkhoff_one && m == 1.0;
  return {st.return_fraction == 0.0 && st.returned == 0 && birkhoff_one && st.singular == 0,
          "return_fraction " + num(st.return_fraction) + ", mean|S_n/n| " +
              (birkhoff_one ? std::string("= 1 exactly") : std::string("!= 1")) + " at all " +
              std::to_string(st.grid.size()) + " grid points, " + std::to_string(st.orbits) + " orbits"};
}

struct PositiveRun {
  Verdict verdict;
  RecurrenceStats stats;
};

PositiveRun positive_control() {
  const auto spec = shipped("quenched_disc_tube");
  TubeRealization tube(spec.cell.build(), spec.process, spec.seed);
  ValidationOptions vo;
  vo.bounds = spec.bounds;
  vo.declared = spec.declared;
  vo.window_lo = spec.experiment.window_lo;
  vo.window_hi = spec.experiment.window_hi;
  vo.a3_samples = spec.experiment.samples;
  vo.a5_attempts = spec.experiment.attempts;
  vo.seed = spec.seed;
  vo.workers = hardware_workers();
  const bool valid = validate_tube(tube, vo).clean() && detail::static_problems(tube, spec).empty();

  const auto t0 = Clock::now();
  RecurrenceOptions o;
  o.orbits = 1000;
  o.horizon = 100000;
  o.sample_seed = spec.seed;
  o.workers = hardware_workers();
  o.rho = spec.experiment.rho;
  auto st = recurrence_experiment(tube, o);
  const double secs = seconds_since(t0);
  const double f3 = st.return_fraction_at(1000), f4 = st.return_fraction_at(10000),
               f5 = st.return_fraction_at(100000);
  PositiveRun out;
  out.verdict = {valid && f5 >= 0.9 && f3 <= f4 && f4 <= f5 && secs < 300.0,
                 std::string(valid ? "validators clean" : "VALIDATORS NOT CLEAN") + "; return_fraction at 1e3/1e4/1e5: " +
                     num(f3) + " / " + num(f4) + " / " + num(f5) + " (" + std::to_string(st.singular) +
                     " singular); " + num(secs) + " s with " + std::to_string(o.workers) + " worker(s)"};
  out.stats = std::move(st);
  return out;
}

Verdict schmidt(const RecurrenceStats& quenched) {
  std::vector<double> q;
  for (const auto& p : quenched.qn_curve.points) {
    if (p.rho == 0.1) q.push_back(p.q);
  }
  // Q_n is a probability: once it reaches 1 it can only stay there.
  bool increasing = q.size() >= 2;
  for (std::size_t i = 1; i < q.size(); ++i) {
    increasing = increasing && (q[i] > q[i - 1] || (q[i] == 1.0 && q[i - 1] == 1.0));
  }
  std::string curve;
  for (double v : q) curve += (curve.empty() ? "" : ", ") + num(v);

  const auto spec = shipped("empty_channel");
  TubeRealization tube(spec.cell.build(), spec.process, spec.seed);
  const auto empty = recurrence_experiment(tube, detail::recurrence_options(spec, spec.seed, hardware_workers()));
  bool empty_zero = true;
  for (const auto& p : empty.qn_curve.points) {
    if (p.rho < 1.0) empty_zero = empty_zero && p.q == 0.0;
  }
  return {increasing && !q.empty() && q.back() > 0.9 && empty_zero,
          "quenched Q_n([-0.1, 0.1]) on the log grid: " + curve + "; empty channel Q_n = 0 for rho < 1: " +
              (empty_zero ? "yes" : "no")};
}

Verdict process_layer() {
  const std::vector<std::vector<double>> P{{0.5, 0.3, 0.2}, {0.2, 0.6, 0.2}, {0.3, 0.3, 0.4}};
  ConfigurationProcess proc;
  proc.variant = ProcessVariant::markov;
  for (int i = 0; i < 3; ++i) {
    CellConfig cfg;
    cfg.name = "c" + std::to_string(i);
    proc.library.push_back(cfg);
  }
  proc.transition = P;
  proc.stationary = stationary_distribution(P);
  const auto& pi = proc.stationary;
  constexpr std::int64_t kCells = 10000;

  TubeRealization tube(CellTemplate::rectangle(), proc, 42);
  std::vector<std::vector<double>> counts(3, std::vector<double>(3, 0.0));
  for (std::int64_t n = 0; n < kCells; ++n) counts[tube.index(n)][tube.index(n + 1)] += 1.0;
  double worst_p = 0.0;
  for (std::size_t a = 0; a < 3; ++a) {
    double row = 0.0;
    for (double v : counts[a]) row += v;
    for (std::size_t b = 0; b < 3; ++b) worst_p = std::max(worst_p, std::abs(counts[a][b] / row - P[a][b]));
  }
  std::vector<double> back(3, 0.0);
  for (std::int64_t n = -kCells; n < 0; ++n) back[tube.index(n)] += 1.0;
  double worst_pi = 0.0;
  for (std::size_t a = 0; a < 3; ++a) worst_pi = std::max(worst_pi, std::abs(back[a] / kCells - pi[a]));

  std::vector<std::int64_t> order;
  for (std::int64_t n = -2000; n < 2000; ++n) order.push_back(n);
  std::shuffle(order.begin(), order.end(), std::mt19937_64(3));
  TubeRealization permuted(CellTemplate::rectangle(), proc, 42);
  std::vector<std::size_t> got(order.size());
  for (auto n : order) got[static_cast<std::size_t>(n + 2000)] = permuted.index(n);
  bool same = true;
  for (std::int64_t n = -2000; n < 2000; ++n) same = same && got[static_cast<std::size_t>(n + 2000)] == tube.index(n);

  return {worst_p <= 0.03 && worst_pi <= 0.03 && same,
          "max |P_hat - P| " + num(worst_p) + " over " + std::to_string(kCells) +
              " transitions, max backward marginal error " + num(worst_pi) + ", permuted query order " +
              (same ? "identical" : "DIFFERENT")};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Verdict determinism() {
  const auto root = fs::temp_directory_path() / "qtube_acceptance";
  fs::remove_all(root);
  int compared = 0, differ = 0;
  std::string first_difference;
  for (const auto* name : {"empty_channel", "periodic_disc_tube", "quenched_disc_tube"}) {
    const auto spec = shipped(name);
    for (const auto& command : {std::string("validate"), spec.experiment.kind}) {
      const auto a = root / name / (command + "_w1");
      const auto b = root / name / (command + "_w4");
      const auto ra = run(spec, {command, 1, std::nullopt, a, false});
      run(spec, {command, 4, std::nullopt, b, false});
      for (const auto& f : ra.files) {
        if (f == "manifest.json") continue;  // records the worker count and wall time
        ++compared;
        if (slurp(a / f) != slurp(b / f)) {
          ++differ;
          if (first_difference.empty()) first_difference = std::string(name) + "/" + command + "/" + f;
        }
      }
    }
  }
  return {differ == 0 && compared > 0,
          std::to_string(compared) + " output files compared across workers 1 vs 4 for all shipped specs, " +
              std::to_string(differ) + " differ" + (first_difference.empty() ? "" : " (first: " + first_difference + ")")};
}

}  // namespace

int main() {
  int failed = 0;
  auto report = [&](int id, const char* title, const Verdict& v) {
    std::printf("CRITERION %d %-22s %s  %s\n", id, title, v.pass ? "PASS" : "FAIL", v.detail.c_str());
    std::fflush(stdout);
    if (!v.pass) ++failed;
  };
  report(1, "geometry-kernel", geometry_kernel());
  report(2, "flux-invariance", flux_invariance());
  report(3, "time-reversal", time_reversal());
  report(4, "conjugacy", conjugacy());
  report(5, "negative-control", negative_control());
  const auto positive = positive_control();
  report(6, "positive-control", positive.verdict);
  report(7, "schmidt-lln", schmidt(positive.stats));
  report(8, "process-layer", process_layer());
  report(9, "determinism", determinism());
  std::printf("%d of 9 criteria passed\n", 9 - failed);
  return failed == 0 ? 0 : 1;
}
