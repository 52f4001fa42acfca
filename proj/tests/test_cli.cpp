#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "poissonred/config.hpp"
#include "poissonred/io.hpp"
#include "poissonred/run.hpp"

using namespace poissonred;
namespace fs = std::filesystem;

namespace {

const std::string kCli = POISSONRED_CLI;
const fs::path kFixtures = POISSONRED_FIXTURES;

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / "poissonred_cli_tests" / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

int cli(const std::string& args) {
  const std::string cmd = kCli + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string cli_stderr(const std::string& args) {
  const fs::path err = scratch("stderr") / "err.txt";
  [[maybe_unused]] const int rc = std::system((kCli + " " + args + " >/dev/null 2>" + err.string()).c_str());
  return read_file(err);
}

fs::path write_config(const std::string& name, const std::string& text) {
  const fs::path p = scratch("configs") / name;
  write_file(p, text);
  return p;
}

nlohmann::json report(const fs::path& dir) { return nlohmann::json::parse(read_file(dir / "report.json")); }

const char* kMinimal = R"({
  "version": 1,
  "phase_space": {"n": 1},
  "structure": {"kind": "canonical"},
  "hamiltonian": "(p1^2+q1^2)/2",
  "integrator": {"dt": 0.01, "t_end": 1.0, "x0": [1, 0]}
})";

std::string expect_config_error(const std::string& text) {
  try {
    parse_config(text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  ADD_FAILURE() << "expected a config error";
  return {};
}

}  // namespace

TEST(LoadConfig, MinimalCanonicalIsValid) {
  const auto cfg = parse_config(kMinimal);
  ASSERT_TRUE(cfg.structure);
  EXPECT_EQ(cfg.structure->kind(), StructureKind::Canonical);
  EXPECT_EQ(cfg.hamiltonians.size(), 1u);
  EXPECT_EQ(cfg.integrator->method, Method::RK4);
  EXPECT_EQ(cfg.digest, fnv1a_hex(kMinimal));
}

TEST(LoadConfig, HamiltonianParseErrorNamesOffset) {
  std::string text = kMinimal;
  text.replace(text.find("(p1^2+q1^2)/2"), 13, "q1 +* p1");
  const auto msg = expect_config_error(text);
  EXPECT_NE(msg.find("/hamiltonian"), std::string::npos) << msg;
  EXPECT_NE(msg.find("offset 4"), std::string::npos) << msg;
}

TEST(LoadConfig, QOneOverPTwoFixtureIsThetaFField) {
  const auto cfg = load_config(kFixtures / "reduce_q1_over_p2.json");
  ASSERT_TRUE(cfg.structure);
  EXPECT_EQ(cfg.structure->kind(), StructureKind::ThetaFField);
  EXPECT_EQ(cfg.structure->theta(0, 1).str(), parse("-q1/p2").str());
  EXPECT_EQ(cfg.structure->field_strength(0, 1).str(), parse("-p2/q1").str());
  EXPECT_EQ(cfg.filters.size(), 2u);
}

TEST(LoadConfig, SchemaErrorsCarryJsonPath) {
  std::string missing = kMinimal;
  missing.replace(missing.find(", \"x0\": [1, 0]"), 14, "");
  EXPECT_NE(expect_config_error(missing).find("/integrator/x0: missing key"), std::string::npos);

  std::string wrong = kMinimal;
  wrong.replace(wrong.find("0.01"), 4, "\"fast\"");
  EXPECT_NE(expect_config_error(wrong).find("/integrator/dt: expected number"), std::string::npos);

  std::string unknown = kMinimal;
  unknown.replace(unknown.find("\"dt\""), 4, "\"step\"");
  EXPECT_NE(expect_config_error(unknown).find("/integrator/step: unknown key"), std::string::npos);

  std::string version = kMinimal;
  version.replace(version.find("\"version\": 1"), 12, "\"version\": 2");
  EXPECT_NE(expect_config_error(version).find("/version"), std::string::npos);

  std::string foreign = kMinimal;
  foreign.replace(foreign.find("(p1^2+q1^2)/2"), 13, "q2");
  EXPECT_NE(expect_config_error(foreign).find("'q2'"), std::string::npos);

  std::string shape = kMinimal;
  shape.replace(shape.find("[1, 0]"), 6, "[1, 0, 0]");
  EXPECT_NE(expect_config_error(shape).find("/integrator/x0: expected 2 numbers"), std::string::npos);

  EXPECT_NE(expect_config_error("{\"version\": 1,").find("invalid JSON"), std::string::npos);
}

TEST(LoadConfig, StructureValidation) {
  const std::string bad = R"({"version": 1, "phase_space": {"n": 2},
    "structure": {"kind": "theta-F-field", "theta_entries": {"1,2": "q2", "2,1": "q2"}}})";
  EXPECT_NE(expect_config_error(bad).find("/structure: theta is not antisymmetric"), std::string::npos);
  const std::string kind = R"({"version": 1, "structure": {"kind": "symplectic"}})";
  EXPECT_NE(expect_config_error(kind).find("/structure/kind"), std::string::npos);
  const std::string loglog = R"({"version": 1, "hodograph": {"kind": "loglog",
    "params": {"alpha": 1, "u0": 1, "v0": 1}, "alphas": [1, 10],
    "grid": {"x": [-1, 1], "y": [-1, 1], "nx": 3, "ny": 3}}})";
  EXPECT_NE(expect_config_error(loglog).find("/hodograph/alphas"), std::string::npos);
}

TEST(Run, ConstantThetaFJacobiVanishes) {
  const auto out = scratch("jacobi_constant");
  ASSERT_EQ(cli("check-jacobi --config " + (kFixtures / "jacobi_constant.json").string() + " --out " + out.string()),
            0);
  const auto r = report(out);
  EXPECT_TRUE(r["passed"].get<bool>());
  EXPECT_EQ(r["metrics"]["generic_max"].get<double>(), 0.0);
  EXPECT_EQ(r["rng_algorithm"], "splitmix64");
  for (const auto& a : r["assertions"]) {
    EXPECT_TRUE(a.contains("tolerance"));
    EXPECT_FALSE(a["anchor"].get<std::string>().empty());
  }
}

TEST(Run, ReduceOscillator) {
  const auto out = scratch("reduce_oscillator");
  ASSERT_EQ(cli("reduce --config " + (kFixtures / "reduce_oscillator.json").string() + " --out " + out.string()), 0);
  const auto m = report(out)["metrics"];
  EXPECT_EQ(m["theta_red.12"].get<double>(), 1.0);
  EXPECT_LE(m["spread"].get<double>(), 1e-9);
  EXPECT_NEAR(m["omega_red"].get<double>(), 2.0, 1e-12);
  EXPECT_NEAR(m["reduced_frequency"].get<double>(), 2.0, 1e-3);
  EXPECT_TRUE(fs::exists(out / "spectrum.csv"));
}

TEST(Run, HodographLinearSweepTable) {
  const auto out = scratch("hodograph_linear");
  ASSERT_EQ(cli("hodograph --config " + (kFixtures / "hodograph_linear.json").string() + " --out " + out.string()),
            0);
  std::istringstream csv(read_file(out / "limit.csv"));
  std::string line;
  std::getline(csv, line);
  EXPECT_EQ(line, "alpha,max_dev_u,max_dev_v,max_u_minus_v,fitted_order");
  const double expected[] = {0.5, 0.05, 0.005};
  for (double e : expected) {
    ASSERT_TRUE(std::getline(csv, line));
    const auto first = line.find(','), second = line.find(',', first + 1);
    EXPECT_NEAR(std::stod(line.substr(first + 1, second - first - 1)), e, 1e-12) << line;
  }
  EXPECT_EQ(report(out)["units"]["alpha"], "[length]^3");
}

TEST(Run, TrajectoryCsvRoundTrips) {
  const auto out = scratch("trajectory");
  ASSERT_EQ(cli("integrate --config " + write_config("min.json", kMinimal).string() + " --out " + out.string()), 0);
  std::istringstream csv(read_file(out / "trajectory.csv"));
  std::string line;
  std::getline(csv, line);
  EXPECT_EQ(line, "t,q1,p1,H,c1");
  std::size_t rows = 0;
  while (std::getline(csv, line)) {
    std::istringstream cells(line);
    std::string cell;
    while (std::getline(cells, cell, ',')) EXPECT_EQ(format_double(std::stod(cell)), cell);
    ++rows;
  }
  EXPECT_EQ(rows, 101u);
}

TEST(Run, CsvQuotesHeadersWithCommas) {
  CsvTable t({"a", "{q1,F12}", "say \"hi\""});
  EXPECT_EQ(t.str(), "a,\"{q1,F12}\",\"say \"\"hi\"\"\"\n");
}

TEST(ExitCodes, Contract) {
  const auto out = scratch("exit");
  std::string failing = kMinimal;
  failing.insert(failing.rfind('}'), ", \"expect\": {\"drift.H\": {\"min\": 1.0}}");
  EXPECT_EQ(cli("integrate --config " + write_config("fail.json", failing).string() + " --out " + out.string()), 1);
  const auto r = report(out);
  EXPECT_FALSE(r["passed"].get<bool>());
  EXPECT_FALSE(r["assertions"][0]["passed"].get<bool>());

  std::string broken = kMinimal;
  broken.replace(broken.find("(p1^2+q1^2)/2"), 13, "q1 +* p1");
  EXPECT_EQ(cli("integrate --config " + write_config("broken.json", broken).string()), 2);
  EXPECT_EQ(cli("integrate --config /nonexistent/config.json"), 2);
  EXPECT_EQ(cli("reduce --config " + write_config("min2.json", kMinimal).string() + " --out " + out.string()), 2);
  EXPECT_EQ(cli("frobnicate --config x.json"), 2);

  std::string numeric = kMinimal;
  numeric.replace(numeric.find("(p1^2+q1^2)/2"), 13, "log(q1)");
  numeric.replace(numeric.find("[1, 0]"), 6, "[-1, 0]");
  EXPECT_EQ(cli("integrate --config " + write_config("numeric.json", numeric).string() + " --out " + out.string()),
            3);
  EXPECT_TRUE(report(out).contains("error"));
  EXPECT_NE(cli_stderr("integrate --config " + write_config("numeric2.json", numeric).string() + " --out " +
                       out.string())
                .find("numeric error"),
            std::string::npos);
}

TEST(Overrides, SeedAndTolerance) {
  const auto a = scratch("seed_a"), b = scratch("seed_b");
  const auto cfg = (kFixtures / "jacobi_canonical.json").string();
  ASSERT_EQ(cli("check-jacobi --config " + cfg + " --out " + a.string() + " --seed 1"), 0);
  ASSERT_EQ(cli("check-jacobi --config " + cfg + " --out " + b.string() + " --seed 2"), 0);
  EXPECT_EQ(report(a)["seed"], 1);
  EXPECT_NE(read_file(a / "jacobi.csv"), read_file(b / "jacobi.csv"));

  const auto c = scratch("tol");
  EXPECT_EQ(cli("check-jacobi --config " + (kFixtures / "jacobi_violating.json").string() + " --out " + c.string() +
                " --tol 1e-3"),
            0);
  const auto d = scratch("tol2");
  std::string strict = kMinimal;
  strict.insert(strict.rfind('}'), ", \"expect\": {\"drift.H\": {\"max\": 1e-3}}");
  EXPECT_EQ(cli("integrate --config " + write_config("tol.json", strict).string() + " --out " + d.string() +
                " --tol 1e-30"),
            1);
  EXPECT_EQ(report(d)["assertions"][0]["tolerance"].get<double>(), 1e-30);
}

TEST(Determinism, RepeatedRunsAreByteIdentical) {
  for (const char* name : {"jacobi_planar.json", "reduce_planar_casimir.json", "hodograph_custom.json"}) {
    const auto a = scratch("det_a"), b = scratch("det_b");
    const auto cfg = (kFixtures / name).string();
    std::string cmd = name[0] == 'j' ? "check-jacobi" : name[0] == 'r' ? "reduce" : "hodograph";
    cli(cmd + " --config " + cfg + " --out " + a.string());
    cli(cmd + " --config " + cfg + " --out " + b.string());
    std::size_t files = 0;
    for (const auto& entry : fs::directory_iterator(a)) {
      EXPECT_EQ(read_file(entry.path()), read_file(b / entry.path().filename())) << name << " " << entry.path();
      ++files;
    }
    EXPECT_GE(files, 2u) << name;
  }
}
