// Command-line front end: one subcommand per experiment kind, all driven by a
// JSON spec. Exit status 0 on success, 1 on usage or spec errors, 2 when the
// configuration is statically invalid, 3 for `validate --strict` failures.

#include <CLI11.hpp>

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include "qtube/io.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Billiard tubes with quenched random configurations"};
  app.set_version_flag("--version", std::string(qtube::kVersion));
  app.require_subcommand(1, 1);

  std::string spec_path;
  std::optional<std::uint64_t> seed;
  int workers = 1;
  std::optional<std::string> out_dir;
  bool strict = false;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--spec", spec_path, "experiment spec (JSON)")->required()->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "override the spec's seed");
    sub->add_option("--workers", workers, "worker threads")->check(CLI::Range(1, 1024));
    sub->add_option("--out", out_dir, "output directory (default: the spec's output.dir)");
  };

  auto* validate = app.add_subcommand("validate", "check the configuration and the standing assumptions");
  add_common(validate);
  validate->add_flag("--strict", strict, "fail unless every assumption check is clean");
  add_common(app.add_subcommand("orbit", "follow one orbit and write every crossing"));
  add_common(app.add_subcommand("recurrence", "Monte Carlo return statistics"));
  add_common(app.add_subcommand("schmidt", "small-ball estimates of S_n / n"));
  add_common(app.add_subcommand("plotdata", "rebuild plot files from a stored orbits.tsv"));

  CLI11_PARSE(app, argc, argv);

  qtube::RunOptions opt;
  opt.command = app.get_subcommands().front()->get_name();
  opt.workers = workers;
  opt.seed = seed;
  if (out_dir) opt.out_dir = *out_dir;
  opt.strict = strict;

  try {
    const auto spec = qtube::load_spec(spec_path);
    const auto res = qtube::run(spec, opt);
    std::cout << res.summary;
    std::cout << "wrote " << res.files.size() << " files to " << res.out_dir.string() << "\n";
    return res.status;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
