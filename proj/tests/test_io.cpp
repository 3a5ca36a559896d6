#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "qtube/io.hpp"

using namespace qtube;
namespace fs = std::filesystem;

namespace {

const char* kMinimal = R"({
  "template": {"vertices": [[0, 0], [1, 0], [1, 1], [0, 1]], "gate1_sides": [3], "gate2_sides": [1]},
  "library": [{}], "process": {"variant": "iid"},
  "seed": 1
})";

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("qtube_io_" + name);
  fs::remove_all(dir);
  return dir;
}

ExperimentSpec shipped(const std::string& name) {
  return load_spec(fs::path(QTUBE_SOURCE_DIR) / "configs" / (name + ".json"));
}

std::string parse_error(const std::string& text) {
  try {
    (void)parse_spec(text);
  } catch (const SpecError& e) {
    return e.what();
  }
  return "";
}

std::string with(const std::string& from, const std::string& to) {
  std::string s = kMinimal;
  const auto pos = s.find(from);
  if (pos == std::string::npos) throw std::logic_error("fixture text not found: " + from);
  return s.replace(pos, from.size(), to);
}

ExperimentSpec small_disc_tube() {
  auto s = shipped("quenched_disc_tube");
  s.experiment.orbits = 60;
  s.experiment.horizon = 2000;
  s.experiment.samples = 500;
  s.experiment.attempts = 200;
  return s;
}

std::size_t line_count(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

}  // namespace

TEST(ParseSpec, MinimalSpecParses) {
  const auto s = parse_spec(kMinimal);
  EXPECT_EQ(s.cell.vertices.size(), 4u);
  EXPECT_EQ(s.process.library.size(), 1u);
  EXPECT_EQ(s.process.probabilities, std::vector<double>{1.0});
  EXPECT_EQ(s.seed, 1u);
  EXPECT_NO_THROW((void)s.cell.build());
}

TEST(ParseSpec, GateIndexOutOfRangeNamesField) {
  const auto err = parse_error(with(R"("gate1_sides": [3])", R"("gate1_sides": [7])"));
  EXPECT_NE(err.find("template.gate1_sides[0]"), std::string::npos) << err;
}

TEST(ParseSpec, UnknownFieldsRejected) {
  auto err = parse_error(with(R"("seed": 1)", R"("seed": 1, "sead": 2)"));
  EXPECT_NE(err.find("sead"), std::string::npos) << err;
  err = parse_error(with(R"("variant": "iid")", R"("variant": "iid", "extra": 0)"));
  EXPECT_NE(err.find("process.extra"), std::string::npos) << err;
  err = parse_error(with("[{}]", R"([{"scatterers": [{"disc": {"center": [0.5, 0.5], "radius": 0.2, "r": 1}}]}])"));
  EXPECT_NE(err.find("library[0].scatterers[0].disc.r"), std::string::npos) << err;
}

TEST(ParseSpec, MalformedJsonReportsPosition) {
  const auto err = parse_error(R"({"template": [1, 2,)");
  EXPECT_NE(err.find("byte"), std::string::npos) << err;
}

TEST(ParseSpec, BudgetsMustBePositive) {
  auto err = parse_error(with(R"("seed": 1)", R"("seed": 1, "experiment": {"orbits": 0})"));
  EXPECT_NE(err.find("experiment.orbits"), std::string::npos) << err;
  err = parse_error(with(R"("seed": 1)", R"("seed": 1, "experiment": {"window": [3, 3]})"));
  EXPECT_NE(err.find("experiment.window"), std::string::npos) << err;
}

TEST(ParseSpec, ProcessChecks) {
  auto err = parse_error(with(R"("variant": "iid")", R"("variant": "iid", "probabilities": [0.5, 0.5])"));
  EXPECT_NE(err.find("process.probabilities"), std::string::npos) << err;
  err = parse_error(with(R"("variant": "iid")", R"("variant": "poisson")"));
  EXPECT_NE(err.find("process.variant"), std::string::npos) << err;
  err = parse_error(with(R"("variant": "iid")", R"("variant": "iid", "amplitude": 0.1)"));
  EXPECT_NE(err.find("process.amplitude"), std::string::npos) << err;
}

TEST(ParseSpec, MarkovAndJitterVariants) {
  const auto m = parse_spec(with(R"("library": [{}], "process": {"variant": "iid"})",
                                 R"("library": [{}, {"name": "b"}],
                                    "process": {"variant": "markov", "transition": [[0.9, 0.1], [0.3, 0.7]]})"));
  EXPECT_EQ(m.process.variant, ProcessVariant::markov);
  ASSERT_EQ(m.process.stationary.size(), 2u);
  EXPECT_NEAR(m.process.stationary[0], 0.75, 1e-12);
  const auto j = parse_spec(with(R"("process": {"variant": "iid"})",
                                 R"("process": {"variant": "iid_jitter", "amplitude": 0.05})"));
  EXPECT_EQ(j.process.variant, ProcessVariant::iid_jitter);
  EXPECT_EQ(j.process.jitter_amplitude, 0.05);
}

TEST(ParseSpec, ScattererForms) {
  const auto s = parse_spec(with("[{}]", R"([{"scatterers": [
      {"disc": {"center": [0.3, 0.5], "radius": 0.1}},
      {"polygon": [[0.6, 0.4], [0.8, 0.4], [0.7, 0.6]]},
      {"pieces": [{"arc": {"center": [0.5, 0.15], "radius": 0.05, "angle_start": 0, "angle_span": 3.141592653589793}},
                  {"segment": {"a": [0.45, 0.15], "b": [0.55, 0.15]}}]}],
    "walls": [[[0.1, 0.0], [0.1, 0.05]]]}])"));
  const auto& cfg = s.process.library[0];
  ASSERT_EQ(cfg.scatterers.size(), 3u);
  EXPECT_EQ(cfg.scatterers[1].boundary.size(), 3u);
  EXPECT_EQ(cfg.scatterers[2].boundary.size(), 2u);
  EXPECT_EQ(cfg.walls.size(), 1u);
}

TEST(EmitSpec, RoundTripsShippedSpecs) {
  for (const auto* name : {"empty_channel", "periodic_disc_tube", "quenched_disc_tube"}) {
    const auto s = shipped(name);
    const auto text = emit_spec(s);
    const auto back = parse_spec(text);
    EXPECT_EQ(back, s) << name;
    EXPECT_EQ(emit_spec(back), text) << name;
  }
}

TEST(EmitSpec, RoundTripsMarkovAndPieces) {
  auto s = parse_spec(with(R"("library": [{}], "process": {"variant": "iid"})",
                           R"("library": [{}, {"scatterers": [{"polygon": [[0.4, 0.4], [0.6, 0.4], [0.5, 0.6]]}]}],
                              "process": {"variant": "markov", "transition": [[0.5, 0.5], [0.2, 0.8]]})"));
  s.experiment.initial = InitialCondition{2, 0, 0.25, -0.3};
  s.declared.gamma_M = 3.5;
  EXPECT_EQ(parse_spec(emit_spec(s)), s);
}

TEST(Run, ValidateEmptySquareIsStatusZero) {
  const auto dir = scratch("validate_empty");
  const auto res = run(parse_spec(kMinimal), {"validate", 1, std::nullopt, dir, false});
  EXPECT_EQ(res.status, 0);
  EXPECT_TRUE(fs::exists(dir / "validation.tsv"));
  EXPECT_TRUE(fs::exists(dir / "manifest.json"));
  const auto text = slurp(dir / "validation.tsv");
  EXPECT_NE(text.find("a1\tclean\ttrue"), std::string::npos);
  EXPECT_NE(text.find("a4\tclean\ttrue"), std::string::npos);
  // The assumption checks that need scatterers do not hold here.
  EXPECT_NE(text.find("a3\tapplicable\tfalse"), std::string::npos);
  const auto strict = run(parse_spec(kMinimal), {"validate", 1, std::nullopt, dir, true});
  EXPECT_EQ(strict.status, kExitAssumptions);
}

TEST(Run, ValidateDiscTubeStrictIsClean) {
  const auto dir = scratch("validate_disc");
  const auto res = run(small_disc_tube(), {"validate", 1, std::nullopt, dir, true});
  EXPECT_EQ(res.status, 0) << slurp(dir / "validation.tsv");
}

TEST(Run, StaticViolationAbortsExperiment) {
  auto s = parse_spec(with("[{}]", R"([{"scatterers": [{"disc": {"center": [0.5, 0.5], "radius": 0.7}}]}])"));
  const auto dir = scratch("static");
  const auto res = run(s, {"recurrence", 1, std::nullopt, dir, false});
  EXPECT_EQ(res.status, kExitStaticViolation);
  EXPECT_TRUE(fs::exists(dir / "static_problems.tsv"));
  EXPECT_FALSE(fs::exists(dir / "summary.tsv"));
}

TEST(Run, EmptyChannelRecurrenceFiles) {
  auto s = shipped("empty_channel");
  s.experiment.orbits = 50;
  s.experiment.horizon = 1000;
  const auto dir = scratch("empty_rec");
  const auto res = run(s, {"recurrence", 1, std::nullopt, dir, false});
  ASSERT_EQ(res.status, 0);
  EXPECT_NE(slurp(dir / "summary.tsv").find("return_fraction\t0\n"), std::string::npos);
  const auto grid = log_grid(1000);
  const auto birkhoff = slurp(dir / "birkhoff.tsv");
  EXPECT_EQ(line_count(birkhoff), grid.size() + 1);
  std::istringstream in(birkhoff);
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) EXPECT_EQ(line.substr(line.find('\t') + 1), "1");
  EXPECT_EQ(line_count(slurp(dir / "qn.tsv")), grid.size() * s.experiment.rho.size() + 1);
  EXPECT_EQ(line_count(slurp(dir / "orbits.tsv")), 51u);
  EXPECT_TRUE(fs::exists(dir / "return_times.tsv"));
}

TEST(Run, RepeatedAndParallelRunsAreByteIdentical) {
  const auto s = small_disc_tube();
  const auto a = scratch("det_a"), b = scratch("det_b"), c = scratch("det_c");
  const auto ra = run(s, {"recurrence", 1, std::nullopt, a, false});
  run(s, {"recurrence", 1, std::nullopt, b, false});
  run(s, {"recurrence", 3, std::nullopt, c, false});
  for (const auto& f : ra.files) {
    if (f == "manifest.json") continue;
    EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
    EXPECT_EQ(slurp(a / f), slurp(c / f)) << f;
  }
}

TEST(Run, SeedOverrideChangesOutput) {
  const auto s = small_disc_tube();
  const auto a = scratch("seed_a"), b = scratch("seed_b");
  run(s, {"recurrence", 1, std::nullopt, a, false});
  run(s, {"recurrence", 1, std::uint64_t{99}, b, false});
  EXPECT_NE(slurp(a / "orbits.tsv"), slurp(b / "orbits.tsv"));
  const auto m = nlohmann::json::parse(slurp(b / "manifest.json"));
  EXPECT_EQ(m["seed"], 99);
  EXPECT_EQ(m["spec"]["seed"], 99);
}

TEST(Run, PlotdataRebuildsCurvesFromOrbits) {
  const auto s = small_disc_tube();
  const auto dir = scratch("plot");
  run(s, {"recurrence", 1, std::nullopt, dir, false});
  const auto birkhoff = slurp(dir / "birkhoff.tsv");
  const auto qn = slurp(dir / "qn.tsv");
  const auto hist = slurp(dir / "return_times.tsv");
  fs::remove(dir / "birkhoff.tsv");
  fs::remove(dir / "qn.tsv");
  fs::remove(dir / "return_times.tsv");
  const auto res = run(s, {"plotdata", 1, std::nullopt, dir, false});
  ASSERT_EQ(res.status, 0);
  EXPECT_EQ(slurp(dir / "birkhoff.tsv"), birkhoff);
  EXPECT_EQ(slurp(dir / "qn.tsv"), qn);
  EXPECT_EQ(slurp(dir / "return_times.tsv"), hist);
}

TEST(Run, PlotdataWithoutOrbitsFails) {
  EXPECT_THROW(run(small_disc_tube(), {"plotdata", 1, std::nullopt, scratch("plot_missing"), false}), SpecError);
}

TEST(Run, OrbitFromExplicitInitialCondition) {
  auto s = shipped("empty_channel");
  s.experiment.horizon = 5;
  s.experiment.initial = InitialCondition{1, 0, 0.5, 0.0};
  const auto dir = scratch("orbit");
  ASSERT_EQ(run(s, {"orbit", 1, std::nullopt, dir, false}).status, 0);
  std::istringstream in(slurp(dir / "orbit.tsv"));
  std::string line;
  std::getline(in, line);
  int rows = 0;
  while (std::getline(in, line)) {
    std::istringstream cells(line);
    std::string step, e, sum;
    std::getline(cells, step, '\t');
    std::getline(cells, e, '\t');
    std::getline(cells, sum, '\t');
    if (rows > 0) {
      EXPECT_EQ(e, "1");
      EXPECT_EQ(sum, step);
    }
    ++rows;
  }
  EXPECT_EQ(rows, 6);
}

TEST(Run, SchmidtWritesCurveAndEstimate) {
  const auto dir = scratch("schmidt");
  const auto res = run(small_disc_tube(), {"schmidt", 1, std::nullopt, dir, false});
  ASSERT_EQ(res.status, 0);
  EXPECT_TRUE(fs::exists(dir / "qn.tsv"));
  EXPECT_NE(slurp(dir / "schmidt.tsv").find("kappa_hat"), std::string::npos);
}

TEST(Run, ManifestListsFilesWithHashes) {
  const auto dir = scratch("manifest");
  const auto s = small_disc_tube();
  const auto res = run(s, {"recurrence", 2, std::nullopt, dir, false});
  const auto m = nlohmann::json::parse(slurp(dir / "manifest.json"));
  EXPECT_EQ(m["command"], "recurrence");
  EXPECT_EQ(m["workers"], 2);
  EXPECT_EQ(m["files"].size() + 1, res.files.size());
  EXPECT_TRUE(m.contains("wall_time_seconds"));
  // The embedded spec reproduces the run.
  EXPECT_EQ(parse_spec(m["spec"].dump()), s);
}

TEST(OrbitsTsv, RejectsRaggedRows) {
  std::istringstream in("orbit\tstatus\tsteps\tfirst_return\tS_10\n0\tok\t10\n");
  EXPECT_THROW(read_orbits_tsv(in), SpecError);
}

TEST(Format, ShortestRoundTrip) {
  EXPECT_EQ(fmt(0.1), "0.1");
  EXPECT_EQ(fmt(1.0), "1");
  EXPECT_EQ(std::stod(fmt(M_PI)), M_PI);
}
