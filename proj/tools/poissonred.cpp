#include <chrono>
#include <cstdio>
#include <iomanip>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "poissonred/config.hpp"
#include "poissonred/run.hpp"

namespace {

enum Exit { kPass = 0, kAssertion = 1, kConfig = 2, kNumeric = 3 };

}  // namespace

int main(int argc, char** argv) {
  using namespace poissonred;
  CLI::App app{"Generalized Poisson brackets: Jacobi checks, flows, singular reduction and hodograph families"};
  app.require_subcommand(1, 1);
  std::string config_path;
  std::string out_dir;
  std::uint64_t seed = 0;
  double tol = 0.0;
  for (const auto& name : command_names()) {
    auto* sub = app.add_subcommand(name);
    sub->add_option("--config", config_path, "JSON run configuration")->required();
    sub->add_option("--out", out_dir, "output directory (overrides output.directory)");
    sub->add_option("--seed", seed, "PRNG seed (overrides seed)");
    sub->add_option("--tol", tol, "tolerance for every max/near assertion")->check(CLI::PositiveNumber);
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kPass : kConfig;
  }
  const CLI::App* sub = app.get_subcommands().front();
  const std::string command = sub->get_name();

  RunOptions opt;
  if (sub->count("--out")) opt.out_dir = out_dir;
  if (sub->count("--seed")) opt.seed = seed;
  if (sub->count("--tol")) opt.tol = tol;

  const auto start = std::chrono::steady_clock::now();
  RunConfig cfg;
  try {
    cfg = load_config(config_path);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << config_path << ": " << e.what() << "\n";
    return kConfig;
  }
  RunReport report;
  try {
    report = run(command, cfg, opt);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << config_path << ": " << e.what() << "\n";
    return kConfig;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const std::exception& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kNumeric;
  }
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  for (const auto& a : report.assertions)
    std::cout << (a.passed ? "PASS " : "FAIL ") << a.name << " " << a.condition << " value=" << a.value.dump()
              << " bound=" << a.bound.dump() << " tol=" << format_double(a.tolerance) << "\n";
  std::cout << command << ": " << (report.passed() ? "passed" : "failed") << " (" << report.assertions.size()
            << " assertions, " << report.artifacts.size() + 1 << " artifacts, wall " << std::fixed << std::setprecision(3) << seconds
            << " s)\n";
  return report.passed() ? kPass : kAssertion;
}
