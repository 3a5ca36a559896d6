#pragma once
/**
 * @file io.hpp
 * @brief Experiment specs (strict JSON), run orchestration and tabular output.
 *
 * Every output file except manifest.json is a pure function of the spec and
 * the seed; the worker count only changes how fast it is produced. Numbers
 * are written in shortest round-trip form.
 */

#include <json.hpp>

#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "qtube/cell.hpp"
#include "qtube/dynamics.hpp"
#include "qtube/experiments.hpp"
#include "qtube/measure.hpp"
#include "qtube/process.hpp"
#include "qtube/validators.hpp"

namespace qtube {

inline constexpr const char* kVersion = "0.3.0";

class SpecError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TemplateSpec {
  std::vector<Vec2> vertices;
  std::vector<int> gate1_sides;
  std::vector<int> gate2_sides;
  std::optional<Vec2> tau;

  CellTemplate build() const { return CellTemplate::make(vertices, gate1_sides, gate2_sides, tau); }
  bool operator==(const TemplateSpec&) const = default;
};

/// Explicit starting point for `orbit`: angle is measured from the gate's
/// inner normal towards its tangent, in (-pi/2, pi/2).
struct InitialCondition {
  int gate{1};
  int sub{0};
  double u{0.0};
  double angle{0.0};
  bool operator==(const InitialCondition&) const = default;
};

struct ExperimentSettings {
  std::string kind{"recurrence"};  // validate | orbit | recurrence | schmidt
  std::int64_t orbits{1000};
  std::int64_t horizon{100000};
  std::int64_t samples{10000};   // a3 departures
  std::int64_t attempts{1000};   // a5 entries per gate side
  int cap{kDefaultCap};
  std::int64_t window_lo{-50};
  std::int64_t window_hi{50};
  std::vector<double> rho{0.01, 0.05, 0.1, 0.2, 0.5, 1.0};
  std::optional<InitialCondition> initial;
  std::int64_t orbit_index{0};  // mu0 sample used by `orbit` without `initial`
  bool operator==(const ExperimentSettings&) const = default;
};

struct ExperimentSpec {
  std::string name;
  TemplateSpec cell;
  ConfigurationProcess process;
  ConfigBounds bounds;
  DeclaredBounds declared;
  std::uint64_t seed{1};
  ExperimentSettings experiment;
  std::string output_dir{"out"};
  bool operator==(const ExperimentSpec&) const = default;
};

// ---------------------------------------------------------------------------
// Parsing

namespace detail {

using nlohmann::json;

[[noreturn]] inline void fail(const std::string& path, const std::string& what) {
  throw SpecError("spec: " + path + ": " + what);
}

inline std::string at(const std::string& path, const std::string& key) {
  return path.empty() ? key : path + "." + key;
}
inline std::string at(const std::string& path, std::size_t i) { return path + "[" + std::to_string(i) + "]"; }

inline void require_object(const json& j, const std::string& path, std::initializer_list<const char*> allowed,
                           std::initializer_list<const char*> required = {}) {
  if (!j.is_object()) fail(path.empty() ? "<root>" : path, "expected an object");
  std::set<std::string> ok;
  for (const char* k : allowed) ok.insert(k);
  for (const auto& [key, value] : j.items()) {
    if (!ok.count(key)) fail(at(path, key), "unknown field");
  }
  for (const char* k : required) {
    if (!j.contains(k)) fail(at(path, k), "missing required field");
  }
}

inline double read_number(const json& j, const std::string& path) {
  if (!j.is_number()) fail(path, "expected a number");
  const double v = j.get<double>();
  if (!std::isfinite(v)) fail(path, "expected a finite number");
  return v;
}

inline std::int64_t read_int(const json& j, const std::string& path) {
  if (!j.is_number_integer()) fail(path, "expected an integer");
  if (j.is_number_unsigned() && j.get<std::uint64_t>() > static_cast<std::uint64_t>(INT64_MAX)) {
    fail(path, "integer out of range");
  }
  return j.get<std::int64_t>();
}

inline std::int64_t read_positive(const json& j, const std::string& path) {
  const auto v = read_int(j, path);
  if (v < 1) fail(path, "must be positive");
  return v;
}

inline std::uint64_t read_u64(const json& j, const std::string& path) {
  if (j.is_number_unsigned()) return j.get<std::uint64_t>();
  if (j.is_number_integer() && j.get<std::int64_t>() >= 0) return static_cast<std::uint64_t>(j.get<std::int64_t>());
  fail(path, "expected a non-negative integer");
}

inline std::string read_string(const json& j, const std::string& path) {
  if (!j.is_string()) fail(path, "expected a string");
  return j.get<std::string>();
}

inline const json& read_array(const json& j, const std::string& path) {
  if (!j.is_array()) fail(path, "expected an array");
  return j;
}

inline Vec2 read_vec2(const json& j, const std::string& path) {
  if (!j.is_array() || j.size() != 2) fail(path, "expected [x, y]");
  return {read_number(j[0], at(path, 0)), read_number(j[1], at(path, 1))};
}

inline std::vector<Vec2> read_points(const json& j, const std::string& path) {
  std::vector<Vec2> out;
  for (std::size_t i = 0; i < read_array(j, path).size(); ++i) out.push_back(read_vec2(j[i], at(path, i)));
  return out;
}

inline std::vector<double> read_numbers(const json& j, const std::string& path) {
  std::vector<double> out;
  for (std::size_t i = 0; i < read_array(j, path).size(); ++i) out.push_back(read_number(j[i], at(path, i)));
  return out;
}

inline std::vector<int> read_sides(const json& j, const std::string& path, std::size_t n) {
  std::vector<int> out;
  for (std::size_t i = 0; i < read_array(j, path).size(); ++i) {
    const auto v = read_int(j[i], at(path, i));
    if (v < 0 || static_cast<std::size_t>(v) >= n) {
      fail(at(path, i), "side index " + std::to_string(v) + " out of range [0, " + std::to_string(n) + ")");
    }
    out.push_back(static_cast<int>(v));
  }
  if (out.empty()) fail(path, "expected at least one side");
  return out;
}

inline Segment read_segment(const json& j, const std::string& path) {
  require_object(j, path, {"a", "b"}, {"a", "b"});
  return {read_vec2(j["a"], at(path, "a")), read_vec2(j["b"], at(path, "b"))};
}

inline Arc read_arc(const json& j, const std::string& path) {
  require_object(j, path, {"center", "radius", "angle_start", "angle_span"}, {"center", "radius"});
  Arc a;
  a.center = read_vec2(j["center"], at(path, "center"));
  a.radius = read_number(j["radius"], at(path, "radius"));
  if (!(a.radius > 0.0)) fail(at(path, "radius"), "must be positive");
  if (j.contains("angle_start")) a.angle_start = read_number(j["angle_start"], at(path, "angle_start"));
  if (j.contains("angle_span")) {
    a.angle_span = read_number(j["angle_span"], at(path, "angle_span"));
    if (!(a.angle_span > 0.0) || a.angle_span > kTwoPi) fail(at(path, "angle_span"), "must be in (0, 2 pi]");
  }
  return a;
}

inline Scatterer read_scatterer(const json& j, const std::string& path) {
  require_object(j, path, {"disc", "polygon", "pieces"});
  if (j.size() != 1) fail(path, "expected exactly one of disc, polygon, pieces");
  if (j.contains("disc")) {
    const auto p = at(path, "disc");
    require_object(j["disc"], p, {"center", "radius"}, {"center", "radius"});
    const double r = read_number(j["disc"]["radius"], at(p, "radius"));
    if (!(r > 0.0)) fail(at(p, "radius"), "must be positive");
    return Scatterer::disc(read_vec2(j["disc"]["center"], at(p, "center")), r);
  }
  if (j.contains("polygon")) {
    const auto vs = read_points(j["polygon"], at(path, "polygon"));
    if (vs.size() < 3) fail(at(path, "polygon"), "expected at least 3 vertices");
    return Scatterer::convex_polygon(vs);
  }
  const auto p = at(path, "pieces");
  Scatterer s;
  for (std::size_t i = 0; i < read_array(j["pieces"], p).size(); ++i) {
    const auto& piece = j["pieces"][i];
    const auto pp = at(p, i);
    require_object(piece, pp, {"segment", "arc"});
    if (piece.size() != 1) fail(pp, "expected exactly one of segment, arc");
    if (piece.contains("segment")) {
      s.boundary.emplace_back(read_segment(piece["segment"], at(pp, "segment")));
    } else {
      s.boundary.emplace_back(read_arc(piece["arc"], at(pp, "arc")));
    }
  }
  if (s.boundary.empty()) fail(p, "expected at least one piece");
  return s;
}

inline CellConfig read_config(const json& j, const std::string& path) {
  require_object(j, path, {"name", "scatterers", "walls"});
  CellConfig cfg;
  if (j.contains("name")) cfg.name = read_string(j["name"], at(path, "name"));
  if (j.contains("scatterers")) {
    const auto p = at(path, "scatterers");
    for (std::size_t i = 0; i < read_array(j["scatterers"], p).size(); ++i) {
      cfg.scatterers.push_back(read_scatterer(j["scatterers"][i], at(p, i)));
    }
  }
  if (j.contains("walls")) {
    const auto p = at(path, "walls");
    for (std::size_t i = 0; i < read_array(j["walls"], p).size(); ++i) {
      const auto pts = read_points(j["walls"][i], at(p, i));
      if (pts.size() != 2) fail(at(p, i), "expected [[x, y], [x, y]]");
      cfg.walls.push_back({pts[0], pts[1]});
    }
  }
  return cfg;
}

inline std::vector<double> read_distribution(const json& j, const std::string& path, std::size_t n) {
  auto v = read_numbers(j, path);
  if (v.size() != n) fail(path, "expected " + std::to_string(n) + " entries, one per library entry");
  return v;
}

inline ConfigurationProcess read_process(const json& j, const std::string& path, std::vector<CellConfig> library) {
  require_object(j, path, {"variant", "probabilities", "transition", "stationary", "base", "amplitude"},
                 {"variant"});
  ConfigurationProcess p;
  const std::size_t n = library.size();
  p.library = std::move(library);
  const auto variant = read_string(j["variant"], at(path, "variant"));
  auto forbid = [&](std::initializer_list<const char*> keys) {
    for (const char* k : keys) {
      if (j.contains(k)) fail(at(path, k), "not used by variant " + variant);
    }
  };
  if (variant == "iid") {
    forbid({"transition", "stationary", "base", "amplitude"});
    if (j.contains("probabilities")) {
      p.probabilities = read_distribution(j["probabilities"], at(path, "probabilities"), n);
    } else {
      p.probabilities.assign(n, 1.0 / static_cast<double>(n));
    }
  } else if (variant == "markov") {
    p.variant = ProcessVariant::markov;
    forbid({"probabilities", "base", "amplitude"});
    if (!j.contains("transition")) fail(at(path, "transition"), "missing required field");
    const auto tp = at(path, "transition");
    for (std::size_t i = 0; i < read_array(j["transition"], tp).size(); ++i) {
      p.transition.push_back(read_distribution(j["transition"][i], at(tp, i), n));
    }
    if (p.transition.size() != n) fail(tp, "expected " + std::to_string(n) + " rows");
    p.stationary = j.contains("stationary") ? read_distribution(j["stationary"], at(path, "stationary"), n)
                                            : stationary_distribution(p.transition);
  } else if (variant == "iid_jitter") {
    p.variant = ProcessVariant::iid_jitter;
    forbid({"probabilities", "transition", "stationary"});
    if (j.contains("base")) {
      const auto b = read_int(j["base"], at(path, "base"));
      if (b < 0 || static_cast<std::size_t>(b) >= n) fail(at(path, "base"), "library index out of range");
      p.jitter_base = static_cast<std::size_t>(b);
    }
    if (!j.contains("amplitude")) fail(at(path, "amplitude"), "missing required field");
    p.jitter_amplitude = read_number(j["amplitude"], at(path, "amplitude"));
    if (p.jitter_amplitude < 0.0) fail(at(path, "amplitude"), "must be non-negative");
  } else {
    fail(at(path, "variant"), "expected one of iid, markov, iid_jitter");
  }
  if (auto problems = process_problems(p); !problems.empty()) fail(path, problems.front());
  return p;
}

inline const std::set<std::string>& experiment_kinds() {
  static const std::set<std::string> k{"validate", "orbit", "recurrence", "schmidt"};
  return k;
}

}  // namespace detail

/// Parses and checks a spec. Errors name the offending field, or the byte
/// offset for malformed JSON.
inline ExperimentSpec parse_spec(const std::string& text) {
  using detail::at;
  using detail::fail;
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw SpecError("spec: parse error at byte " + std::to_string(e.byte) + ": " + e.what());
  }
  detail::require_object(j, "", {"name", "template", "library", "process", "bounds", "seed", "experiment", "output"},
                         {"template", "library", "process"});
  ExperimentSpec s;
  if (j.contains("name")) s.name = detail::read_string(j["name"], "name");

  const auto& t = j["template"];
  detail::require_object(t, "template", {"vertices", "gate1_sides", "gate2_sides", "tau"},
                         {"vertices", "gate1_sides", "gate2_sides"});
  s.cell.vertices = detail::read_points(t["vertices"], "template.vertices");
  if (s.cell.vertices.size() < 3) fail("template.vertices", "expected at least 3 vertices");
  const auto n = s.cell.vertices.size();
  s.cell.gate1_sides = detail::read_sides(t["gate1_sides"], "template.gate1_sides", n);
  s.cell.gate2_sides = detail::read_sides(t["gate2_sides"], "template.gate2_sides", n);
  if (t.contains("tau")) s.cell.tau = detail::read_vec2(t["tau"], "template.tau");
  try {
    (void)s.cell.build();
  } catch (const std::invalid_argument& e) {
    fail("template", e.what());
  }

  std::vector<CellConfig> library;
  for (std::size_t i = 0; i < detail::read_array(j["library"], "library").size(); ++i) {
    library.push_back(detail::read_config(j["library"][i], at("library", i)));
  }
  if (library.empty()) fail("library", "expected at least one configuration");
  s.process = detail::read_process(j["process"], "process", std::move(library));

  if (j.contains("bounds")) {
    const auto& b = j["bounds"];
    detail::require_object(b, "bounds", {"K", "N", "k_m", "gamma_m", "gamma_M", "M"});
    if (b.contains("K")) s.bounds.max_pieces = static_cast<int>(detail::read_positive(b["K"], "bounds.K"));
    if (b.contains("N")) s.bounds.max_scatterers = static_cast<int>(detail::read_positive(b["N"], "bounds.N"));
    if (b.contains("k_m")) {
      s.bounds.min_curvature = detail::read_number(b["k_m"], "bounds.k_m");
      if (s.bounds.min_curvature < 0.0) fail("bounds.k_m", "must be non-negative");
    }
    if (b.contains("gamma_m")) s.declared.gamma_m = detail::read_number(b["gamma_m"], "bounds.gamma_m");
    if (b.contains("gamma_M") && !b["gamma_M"].is_null()) {
      s.declared.gamma_M = detail::read_number(b["gamma_M"], "bounds.gamma_M");
    }
    if (b.contains("M")) s.declared.max_flat = static_cast<int>(detail::read_positive(b["M"], "bounds.M"));
    if (s.declared.gamma_m > s.declared.gamma_M) fail("bounds.gamma_m", "exceeds gamma_M");
  }
  s.declared.k_m = s.bounds.min_curvature;

  if (j.contains("seed")) s.seed = detail::read_u64(j["seed"], "seed");

  if (j.contains("experiment")) {
    const auto& e = j["experiment"];
    detail::require_object(e, "experiment", {"kind", "orbits", "horizon", "samples", "attempts", "cap", "window",
                                             "rho", "initial", "orbit_index"});
    auto& x = s.experiment;
    if (e.contains("kind")) {
      x.kind = detail::read_string(e["kind"], "experiment.kind");
      if (!detail::experiment_kinds().count(x.kind)) {
        fail("experiment.kind", "expected one of validate, orbit, recurrence, schmidt");
      }
    }
    if (e.contains("orbits")) x.orbits = detail::read_positive(e["orbits"], "experiment.orbits");
    if (e.contains("horizon")) x.horizon = detail::read_positive(e["horizon"], "experiment.horizon");
    if (e.contains("samples")) x.samples = detail::read_positive(e["samples"], "experiment.samples");
    if (e.contains("attempts")) x.attempts = detail::read_positive(e["attempts"], "experiment.attempts");
    if (e.contains("cap")) {
      const auto c = detail::read_positive(e["cap"], "experiment.cap");
      if (c > INT32_MAX) fail("experiment.cap", "too large");
      x.cap = static_cast<int>(c);
    }
    if (e.contains("window")) {
      const auto& w = e["window"];
      if (!w.is_array() || w.size() != 2) fail("experiment.window", "expected [lo, hi]");
      x.window_lo = detail::read_int(w[0], "experiment.window[0]");
      x.window_hi = detail::read_int(w[1], "experiment.window[1]");
      if (x.window_hi <= x.window_lo) fail("experiment.window", "expected lo < hi");
    }
    if (e.contains("rho")) {
      x.rho = detail::read_numbers(e["rho"], "experiment.rho");
      if (x.rho.empty()) fail("experiment.rho", "expected at least one value");
      for (std::size_t i = 0; i < x.rho.size(); ++i) {
        if (!(x.rho[i] > 0.0)) fail(at("experiment.rho", i), "must be positive");
      }
    }
    if (e.contains("orbit_index")) {
      x.orbit_index = detail::read_int(e["orbit_index"], "experiment.orbit_index");
      if (x.orbit_index < 0) fail("experiment.orbit_index", "must be non-negative");
    }
    if (e.contains("initial")) {
      const auto& ic = e["initial"];
      detail::require_object(ic, "experiment.initial", {"gate", "sub", "u", "angle"}, {"gate", "u", "angle"});
      InitialCondition c;
      c.gate = static_cast<int>(detail::read_int(ic["gate"], "experiment.initial.gate"));
      if (c.gate != 1 && c.gate != 2) fail("experiment.initial.gate", "expected 1 or 2");
      if (ic.contains("sub")) {
        const auto sub = detail::read_int(ic["sub"], "experiment.initial.sub");
        if (sub < 0 || static_cast<std::size_t>(sub) >= s.cell.gate1_sides.size()) {
          fail("experiment.initial.sub", "sub-gate index out of range");
        }
        c.sub = static_cast<int>(sub);
      }
      c.u = detail::read_number(ic["u"], "experiment.initial.u");
      c.angle = detail::read_number(ic["angle"], "experiment.initial.angle");
      const double len = s.cell.build().gate_frame(c.gate, c.sub).length;
      if (c.u < 0.0 || c.u > len) fail("experiment.initial.u", "outside the gate side");
      if (!(std::abs(c.angle) < M_PI / 2)) fail("experiment.initial.angle", "expected |angle| < pi/2");
      x.initial = c;
    }
  }

  if (j.contains("output")) {
    detail::require_object(j["output"], "output", {"dir"});
    if (j["output"].contains("dir")) s.output_dir = detail::read_string(j["output"]["dir"], "output.dir");
  }
  return s;
}

// ---------------------------------------------------------------------------
// Canonical emission

namespace detail {

inline json vec_json(Vec2 v) { return json::array({v.x, v.y}); }

inline json scatterer_json(const Scatterer& s) {
  if (s.boundary.size() == 1) {
    if (const auto* a = std::get_if<Arc>(&s.boundary[0]); a && a->is_full_circle() && a->angle_start == 0.0) {
      return {{"disc", {{"center", vec_json(a->center)}, {"radius", a->radius}}}};
    }
  }
  json pieces = json::array();
  for (const auto& p : s.boundary) {
    if (const auto* seg = std::get_if<Segment>(&p)) {
      pieces.push_back({{"segment", {{"a", vec_json(seg->a)}, {"b", vec_json(seg->b)}}}});
    } else {
      const auto& a = std::get<Arc>(p);
      pieces.push_back({{"arc",
                         {{"center", vec_json(a.center)},
                          {"radius", a.radius},
                          {"angle_start", a.angle_start},
                          {"angle_span", a.angle_span}}}});
    }
  }
  return {{"pieces", pieces}};
}

inline json config_json(const CellConfig& c) {
  json j = json::object();
  j["name"] = c.name;
  j["scatterers"] = json::array();
  for (const auto& s : c.scatterers) j["scatterers"].push_back(scatterer_json(s));
  j["walls"] = json::array();
  for (const auto& w : c.walls) j["walls"].push_back(json::array({vec_json(w.a), vec_json(w.b)}));
  return j;
}

}  // namespace detail

inline nlohmann::json spec_json(const ExperimentSpec& s) {
  using nlohmann::json;
  json j;
  j["name"] = s.name;
  json t;
  t["vertices"] = json::array();
  for (auto v : s.cell.vertices) t["vertices"].push_back(detail::vec_json(v));
  t["gate1_sides"] = s.cell.gate1_sides;
  t["gate2_sides"] = s.cell.gate2_sides;
  if (s.cell.tau) t["tau"] = detail::vec_json(*s.cell.tau);
  j["template"] = t;
  j["library"] = json::array();
  for (const auto& c : s.process.library) j["library"].push_back(detail::config_json(c));
  json p;
  switch (s.process.variant) {
    case ProcessVariant::iid:
      p["variant"] = "iid";
      p["probabilities"] = s.process.probabilities;
      break;
    case ProcessVariant::markov:
      p["variant"] = "markov";
      p["transition"] = s.process.transition;
      p["stationary"] = s.process.stationary;
      break;
    case ProcessVariant::iid_jitter:
      p["variant"] = "iid_jitter";
      p["base"] = s.process.jitter_base;
      p["amplitude"] = s.process.jitter_amplitude;
      break;
  }
  j["process"] = p;
  j["bounds"] = {{"K", s.bounds.max_pieces},
                 {"N", s.bounds.max_scatterers},
                 {"k_m", s.bounds.min_curvature},
                 {"gamma_m", s.declared.gamma_m},
                 {"gamma_M", std::isfinite(s.declared.gamma_M) ? json(s.declared.gamma_M) : json(nullptr)},
                 {"M", s.declared.max_flat}};
  j["seed"] = s.seed;
  const auto& x = s.experiment;
  json e = {{"kind", x.kind},         {"orbits", x.orbits}, {"horizon", x.horizon},
            {"samples", x.samples},   {"attempts", x.attempts}, {"cap", x.cap},
            {"window", json::array({x.window_lo, x.window_hi})}, {"rho", x.rho},
            {"orbit_index", x.orbit_index}};
  if (x.initial) {
    e["initial"] = {{"gate", x.initial->gate}, {"sub", x.initial->sub}, {"u", x.initial->u},
                    {"angle", x.initial->angle}};
  }
  j["experiment"] = e;
  j["output"] = {{"dir", s.output_dir}};
  return j;
}

/// Canonical text: all defaults spelled out, keys sorted, two-space indent.
inline std::string emit_spec(const ExperimentSpec& s) { return spec_json(s).dump(2) + "\n"; }

inline ExperimentSpec load_spec(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw SpecError("spec: cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_spec(ss.str());
}

// ---------------------------------------------------------------------------
// Tabular output

inline std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}
inline std::string fmt(std::int64_t v) { return std::to_string(v); }
inline std::string fmt(int v) { return std::to_string(v); }
inline std::string fmt(std::uint64_t v) { return std::to_string(v); }
inline std::string fmt(bool v) { return v ? "true" : "false"; }
inline std::string fmt(const std::string& v) { return v; }
inline std::string fmt(const char* v) { return v; }

class TsvWriter {
 public:
  explicit TsvWriter(std::vector<std::string> header) : columns_(header.size()) { row_strings(header); }

  template <typename... Ts>
  void row(const Ts&... fields) {
    if (sizeof...(Ts) != columns_) throw std::logic_error("tsv: column count mismatch");
    std::vector<std::string> cells{fmt(fields)...};
    row_strings(cells);
  }

  void row_strings(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) out_ << '\t';
      out_ << cells[i];
    }
    out_ << '\n';
  }

  std::string str() const { return out_.str(); }

 private:
  std::size_t columns_;
  std::ostringstream out_;
};

/// Plot-ready curves for one recurrence run.
struct PlotData {
  std::string birkhoff;
  std::string qn;
  std::string return_times;
};

inline PlotData emit_plot_data(const RecurrenceStats& st) {
  PlotData d;
  TsvWriter b({"n", "mean_abs_S_over_n"});
  for (const auto& [n, m] : st.birkhoff_curve) b.row(n, m);
  d.birkhoff = b.str();
  TsvWriter q({"n", "rho", "Q"});
  for (const auto& p : st.qn_curve.points) q.row(p.n, p.rho, p.q);
  d.qn = q.str();
  TsvWriter r({"bin_lo", "bin_hi", "count"});
  for (const auto& bin : st.return_time_histogram) r.row(bin.lo, bin.hi, bin.count);
  d.return_times = r.str();
  return d;
}

inline std::string orbits_tsv(const RecurrenceStats& st) {
  std::vector<std::string> header{"orbit", "status", "steps", "first_return"};
  for (auto n : st.grid) header.push_back("S_" + std::to_string(n));
  TsvWriter w(header);
  for (std::size_t i = 0; i < st.per_orbit.size(); ++i) {
    const auto& o = st.per_orbit[i];
    std::vector<std::string> cells{fmt(i), to_string(o.status), fmt(o.steps), fmt(o.first_return)};
    for (std::size_t g = 0; g < st.grid.size(); ++g) {
      cells.push_back(g < o.s_at_grid.size() ? fmt(o.s_at_grid[g]) : "NA");
    }
    w.row_strings(cells);
  }
  return w.str();
}

inline OrbitStatus status_from_string(const std::string& s) {
  for (auto st : {OrbitStatus::ok, OrbitStatus::singular_tangency, OrbitStatus::singular_vertex,
                  OrbitStatus::cap_exceeded}) {
    if (s == to_string(st)) return st;
  }
  throw SpecError("orbits.tsv: unknown status " + s);
}

/// Reads per-orbit summaries written by orbits_tsv; returns them with the grid.
inline std::pair<std::vector<OrbitSummary>, std::vector<std::int64_t>> read_orbits_tsv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw SpecError("orbits.tsv: empty file");
  auto split = [](const std::string& l) {
    std::vector<std::string> out;
    std::stringstream ss(l);
    std::string cell;
    while (std::getline(ss, cell, '\t')) out.push_back(cell);
    return out;
  };
  const auto header = split(line);
  if (header.size() < 4 || header[0] != "orbit") throw SpecError("orbits.tsv: bad header");
  std::vector<std::int64_t> grid;
  for (std::size_t i = 4; i < header.size(); ++i) grid.push_back(std::stoll(header[i].substr(2)));
  std::vector<OrbitSummary> orbits;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto cells = split(line);
    if (cells.size() != header.size()) {
      throw SpecError("orbits.tsv: line " + std::to_string(lineno) + ": expected " + std::to_string(header.size()) +
                      " fields");
    }
    OrbitSummary o;
    o.status = status_from_string(cells[1]);
    o.steps = std::stoll(cells[2]);
    o.first_return = std::stoll(cells[3]);
    for (std::size_t g = 4; g < cells.size() && cells[g] != "NA"; ++g) o.s_at_grid.push_back(std::stoll(cells[g]));
    orbits.push_back(std::move(o));
  }
  return {std::move(orbits), std::move(grid)};
}

// ---------------------------------------------------------------------------
// Running

struct RunOptions {
  std::string command;  // validate | orbit | recurrence | schmidt | plotdata
  int workers{1};
  std::optional<std::uint64_t> seed;
  std::optional<std::filesystem::path> out_dir;
  bool strict{false};  // validate: nonzero status unless every assumption check is clean
};

struct RunResult {
  int status{0};
  std::filesystem::path out_dir;
  std::vector<std::string> files;  // written, relative to out_dir, manifest last
  std::string summary;             // short human-readable digest
};

inline constexpr int kExitStaticViolation = 2;
inline constexpr int kExitAssumptions = 3;

namespace detail {

inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex;
  os.width(16);
  os.fill('0');
  os << v;
  return os.str();
}

class OutputDir {
 public:
  explicit OutputDir(std::filesystem::path dir) : dir_(std::move(dir)) { std::filesystem::create_directories(dir_); }

  void write(const std::string& name, const std::string& content) {
    std::ofstream out(dir_ / name, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + (dir_ / name).string());
    out << content;
    files_.push_back({name, content.size(), fnv1a(content)});
  }

  struct Entry {
    std::string name;
    std::size_t bytes;
    std::uint64_t hash;
  };
  const std::vector<Entry>& files() const { return files_; }
  const std::filesystem::path& path() const { return dir_; }

 private:
  std::filesystem::path dir_;
  std::vector<Entry> files_;
};

/// Static problems that make every experiment meaningless: malformed cells
/// and a non-ergodic configuration law.
inline std::vector<std::string> static_problems(const TubeRealization& tube, const ExperimentSpec& s) {
  std::vector<std::string> out;
  const auto a1 = check_a1(tube.process());
  if (!a1.irreducible) out.emplace_back("a1: transition matrix is reducible");
  if (a1.stationary_residual > 1e-10) out.emplace_back("a1: stationary vector residual " + fmt(a1.stationary_residual));
  auto report = [&](const std::string& label, const CellConfig& cfg) {
    for (const auto& v : validate_config(cfg, tube.cell_template(), s.bounds)) {
      out.push_back(label + ": " + v.constraint + " (" + v.primitive + "): " + v.detail);
    }
  };
  if (tube.process().variant == ProcessVariant::iid_jitter) {
    for (auto n = s.experiment.window_lo; n < s.experiment.window_hi; ++n) report("cell " + fmt(n), tube.cell(n));
  } else {
    for (std::size_t i = 0; i < tube.process().library.size(); ++i) {
      const auto& c = tube.process().library[i];
      report("library[" + fmt(i) + "]" + (c.name.empty() ? "" : " " + c.name), c);
    }
  }
  return out;
}

inline std::string validation_tsv(const AssumptionReport& r, const ValidationOptions& o) {
  TsvWriter w({"check", "quantity", "value"});
  w.row("a1", "irreducible", r.a1.irreducible);
  w.row("a1", "stationary_residual", r.a1.stationary_residual);
  w.row("a1", "clean", r.a1.clean());
  w.row("a2", "cells_checked", r.a2.cells_checked);
  w.row("a2", "max_pieces_seen", r.a2.max_pieces_seen);
  w.row("a2", "bound_K", r.a2.bound_K);
  w.row("a2", "max_scatterers_seen", r.a2.max_scatterers_seen);
  w.row("a2", "bound_N", r.a2.bound_N);
  w.row("a2", "violations", r.a2.violations);
  w.row("a2", "clean", r.a2.clean());
  w.row("a3", "samples", r.a3.samples);
  w.row("a3", "window_lo", o.window_lo);
  w.row("a3", "window_hi", o.window_hi);
  w.row("a3", "applicable", r.a3.applicable);
  w.row("a3", "singular", r.a3.singular);
  w.row("a3", "gamma_min_sampled", r.a3.applicable && r.a3.samples > r.a3.singular ? r.a3.gamma_min_sampled : 0.0);
  w.row("a3", "gamma_max_sampled", r.a3.gamma_max_sampled);
  w.row("a3", "max_flat_run", r.a3.max_flat_run);
  w.row("a3", "unbounded", r.a3.unbounded);
  w.row("a3", "declared_gamma_m", r.a3.declared_gamma_m);
  w.row("a3", "declared_gamma_M", r.a3.declared_gamma_M);
  w.row("a3", "declared_M", r.a3.declared_M);
  w.row("a3", "violations", r.a3.violations);
  w.row("a3", "clean", r.a3.clean());
  w.row("a4", "arcs_checked", r.a4.arcs_checked);
  w.row("a4", "k_min_seen", r.a4.arcs_checked ? r.a4.k_min_seen : 0.0);
  w.row("a4", "bound_k_m", r.a4.bound_k_m);
  w.row("a4", "violations", r.a4.violations);
  w.row("a4", "clean", r.a4.clean());
  for (std::size_t c = 0; c < r.a5.size(); ++c) {
    w.row("a5", "config_" + fmt(c) + "_attempts_per_side", r.a5[c].attempts);
    w.row("a5", "config_" + fmt(c) + "_missing_pairs", r.a5[c].missing());
  }
  w.row("all", "seed", r.seed);
  w.row("all", "clean", r.clean());
  return w.str();
}

inline std::string witnesses_tsv(const AssumptionReport& r, const CellTemplate& tpl) {
  TsvWriter w({"config", "entry_gate", "entry_sub", "exit_gate", "exit_sub", "witnessed", "x", "y", "vx", "vy",
               "exit_x", "exit_y", "exit_vx", "exit_vy", "collisions"});
  for (std::size_t c = 0; c < r.a5.size(); ++c) {
    for (const auto& p : r.a5[c].pairs) {
      if (!p.initial) {
        w.row(c, p.entry_gate, p.entry_sub, p.exit_gate, p.exit_sub, false, "NA", "NA", "NA", "NA", "NA", "NA", "NA",
              "NA", "NA");
        continue;
      }
      const Vec2 q = position(*p.initial, tpl);
      const Vec2 e = position(p.traversal->crossing, tpl);
      w.row(c, p.entry_gate, p.entry_sub, p.exit_gate, p.exit_sub, true, q.x, q.y, p.initial->v.x(),
            p.initial->v.y(), e.x, e.y, p.traversal->crossing.v.x(), p.traversal->crossing.v.y(),
            p.traversal->collisions);
    }
  }
  return w.str();
}

inline RecurrenceOptions recurrence_options(const ExperimentSpec& s, std::uint64_t seed, int workers) {
  RecurrenceOptions o;
  o.orbits = s.experiment.orbits;
  o.horizon = s.experiment.horizon;
  o.cap = s.experiment.cap;
  o.workers = workers;
  o.sample_seed = seed;
  o.rho = s.experiment.rho;
  return o;
}

inline std::string returns_tsv(const RecurrenceStats& st) {
  TsvWriter w({"n", "return_fraction"});
  for (auto n : st.grid) w.row(n, st.return_fraction_at(n));
  return w.str();
}

inline std::string recurrence_summary_tsv(const RecurrenceStats& st) {
  TsvWriter w({"quantity", "value"});
  w.row("orbits", st.orbits);
  w.row("horizon", st.horizon);
  w.row("returned", st.returned);
  w.row("singular", st.singular);
  w.row("return_fraction", st.return_fraction);
  w.row("kappa_hat", st.qn_curve.kappa_hat);
  return w.str();
}

inline PhasePoint orbit_start(const ExperimentSpec& s, const CellTemplate& tpl, std::uint64_t seed) {
  if (const auto& ic = s.experiment.initial) {
    const GateFrame f = tpl.gate_frame(ic->gate, ic->sub);
    return {ic->gate, ic->sub, ic->u, inward_velocity(f, ic->angle)};
  }
  return Mu0Sampler{&tpl, seed, Stream::mu0}(s.experiment.orbit_index);
}

inline std::string orbit_tsv(const TubeRealization& tube, PhasePoint x0, std::int64_t horizon, int cap,
                             OrbitStatus& final_status, std::int64_t& steps, std::optional<std::int64_t>& first_return) {
  const auto& tpl = tube.cell_template();
  TsvWriter w({"step", "e", "S", "gate", "sub", "u", "x", "y", "vx", "vy", "collisions", "flight_time", "status"});
  const Vec2 q0 = position(x0, tpl);
  w.row(0, 0, 0, x0.gate, x0.sub, x0.u, q0.x, q0.y, x0.v.x(), x0.v.y(), 0, 0.0, "ok");
  PovState state{x0, 0, &tube};
  final_status = OrbitStatus::ok;
  steps = 0;
  first_return.reset();
  for (std::int64_t k = 1; k <= horizon; ++k) {
    auto [next, r] = pov_step(state, cap);
    if (r.status != OrbitStatus::ok) {
      final_status = r.status;
      w.row(k, "NA", "NA", "NA", "NA", "NA", "NA", "NA", "NA", "NA", r.collisions, r.flight_time,
            to_string(r.status));
      break;
    }
    state = next;
    steps = k;
    if (state.shift_offset == 0 && !first_return) first_return = k;
    const Vec2 q = position(state.x, tpl);
    w.row(k, r.e, state.shift_offset, state.x.gate, state.x.sub, state.x.u, q.x, q.y, state.x.v.x(), state.x.v.y(),
          r.collisions, r.flight_time, "ok");
  }
  return w.str();
}

inline std::string now_utc() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace detail

/// Runs one subcommand and writes its artifacts plus manifest.json into the
/// output directory. Returns a nonzero status when the configuration is
/// statically invalid (2) or, with `strict`, when an assumption check fails (3).
inline RunResult run(const ExperimentSpec& spec_in, const RunOptions& opt) {
  const auto t0 = std::chrono::steady_clock::now();
  ExperimentSpec spec = spec_in;
  if (opt.seed) spec.seed = *opt.seed;
  const std::filesystem::path dir = opt.out_dir ? *opt.out_dir : std::filesystem::path(spec.output_dir);
  if (opt.workers < 1) throw std::invalid_argument("run: workers must be >= 1");
  static const std::set<std::string> commands{"validate", "orbit", "recurrence", "schmidt", "plotdata"};
  if (!commands.count(opt.command)) throw std::invalid_argument("run: unknown command " + opt.command);

  RunResult res;
  res.out_dir = dir;
  detail::OutputDir out(dir);
  const CellTemplate tpl = spec.cell.build();
  TubeRealization tube(tpl, spec.process, spec.seed);
  std::ostringstream summary;

  const auto problems = detail::static_problems(tube, spec);
  if (!problems.empty()) {
    TsvWriter w({"problem"});
    for (const auto& p : problems) w.row(p);
    out.write("static_problems.tsv", w.str());
    summary << "configuration is invalid (" << problems.size() << " problems), first: " << problems.front() << "\n";
    res.status = kExitStaticViolation;
  }

  if (res.status == 0 && opt.command == "validate") {
    ValidationOptions vo;
    vo.bounds = spec.bounds;
    vo.declared = spec.declared;
    vo.window_lo = spec.experiment.window_lo;
    vo.window_hi = spec.experiment.window_hi;
    vo.a3_samples = spec.experiment.samples;
    vo.a5_attempts = spec.experiment.attempts;
    vo.seed = spec.seed;
    vo.workers = opt.workers;
    vo.cap = spec.experiment.cap;
    const auto rep = validate_tube(tube, vo);
    out.write("validation.tsv", detail::validation_tsv(rep, vo));
    out.write("a5_witnesses.tsv", detail::witnesses_tsv(rep, tpl));
    summary << "a1 " << (rep.a1.clean() ? "clean" : "FAIL") << ", a2 " << (rep.a2.clean() ? "clean" : "FAIL")
            << ", a3 " << (rep.a3.clean() ? "clean" : (rep.a3.applicable ? "FAIL" : "inapplicable")) << ", a4 "
            << (rep.a4.clean() ? "clean" : "FAIL") << ", a5 ";
    int missing = 0;
    for (const auto& a : rep.a5) missing += a.missing();
    summary << (missing ? std::to_string(missing) + " gate pairs unwitnessed" : std::string("clean")) << "\n";
    if (opt.strict && !rep.clean()) res.status = kExitAssumptions;
  } else if (res.status == 0 && opt.command == "orbit") {
    OrbitStatus st{};
    std::int64_t steps = 0;
    std::optional<std::int64_t> ret;
    const auto x0 = detail::orbit_start(spec, tpl, spec.seed);
    out.write("orbit.tsv", detail::orbit_tsv(tube, x0, spec.experiment.horizon, spec.experiment.cap, st, steps, ret));
    summary << "orbit: " << steps << " crossings, status " << to_string(st) << ", first return "
            << (ret ? std::to_string(*ret) : std::string("none")) << "\n";
  } else if (res.status == 0 && (opt.command == "recurrence" || opt.command == "schmidt")) {
    const auto st = recurrence_experiment(tube, detail::recurrence_options(spec, spec.seed, opt.workers));
    out.write("orbits.tsv", orbits_tsv(st));
    const auto plots = emit_plot_data(st);
    if (opt.command == "recurrence") {
      out.write("summary.tsv", detail::recurrence_summary_tsv(st));
      out.write("returns.tsv", detail::returns_tsv(st));
      out.write("birkhoff.tsv", plots.birkhoff);
      out.write("return_times.tsv", plots.return_times);
    }
    out.write("qn.tsv", plots.qn);
    if (opt.command == "schmidt") {
      TsvWriter w({"quantity", "value"});
      w.row("nu", 1.0);
      w.row("kappa_hat", st.qn_curve.kappa_hat);
      w.row("regular_orbits", st.orbits - st.singular);
      out.write("schmidt.tsv", w.str());
    }
    summary << "orbits " << st.orbits << ", singular " << st.singular << ", return_fraction "
            << fmt(st.return_fraction) << ", kappa_hat " << fmt(st.qn_curve.kappa_hat) << "\n";
  } else if (res.status == 0 && opt.command == "plotdata") {
    std::ifstream in(dir / "orbits.tsv");
    if (!in) throw SpecError("plotdata: " + (dir / "orbits.tsv").string() + " not found; run recurrence first");
    auto [orbits, grid] = read_orbits_tsv(in);
    if (grid.empty()) throw SpecError("plotdata: orbits.tsv has no grid columns");
    const auto horizon = grid.back();
    if (log_grid(horizon) != grid) throw SpecError("plotdata: orbits.tsv grid is not a log grid");
    const auto st = aggregate(std::move(orbits), horizon, spec.experiment.rho);
    const auto plots = emit_plot_data(st);
    out.write("birkhoff.tsv", plots.birkhoff);
    out.write("qn.tsv", plots.qn);
    out.write("return_times.tsv", plots.return_times);
    summary << "plot data for " << st.orbits << " orbits\n";
  }

  const double wall =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  nlohmann::json m;
  m["program"] = "qtube";
  m["version"] = kVersion;
  m["compiler"] = __VERSION__;
  m["command"] = opt.command;
  m["strict"] = opt.strict;
  m["seed"] = spec.seed;
  m["workers"] = opt.workers;
  m["status"] = res.status;
  m["started_utc"] = detail::now_utc();
  m["wall_time_seconds"] = wall;
  m["spec"] = spec_json(spec);
  m["spec_hash"] = detail::hex64(detail::fnv1a(emit_spec(spec)));
  m["files"] = nlohmann::json::array();
  for (const auto& f : out.files()) {
    m["files"].push_back({{"name", f.name}, {"bytes", f.bytes}, {"fnv1a64", detail::hex64(f.hash)}});
    res.files.push_back(f.name);
  }
  out.write("manifest.json", m.dump(2) + "\n");
  res.files.push_back("manifest.json");
  res.summary = summary.str();
  return res;
}

}  // namespace qtube
