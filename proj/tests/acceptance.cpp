#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "poissonred/config.hpp"
#include "poissonred/dynamics.hpp"
#include "poissonred/hodograph.hpp"
#include "poissonred/io.hpp"
#include "poissonred/reduction.hpp"
#include "poissonred/run.hpp"

using namespace poissonred;
namespace fs = std::filesystem;

namespace {

const fs::path kFixtures = POISSONRED_FIXTURES;
const std::string kCli = POISSONRED_CLI;
const fs::path kScratch = fs::temp_directory_path() / "poissonred_acceptance";

// Collects named checks for one criterion; the criterion passes only if all do.
class Checks {
 public:
  void leq(const std::string& what, double value, double bound) {
    add(what, value <= bound, format_double(value) + " <= " + format_double(bound));
  }
  void geq(const std::string& what, double value, double bound) {
    add(what, value >= bound, format_double(value) + " >= " + format_double(bound));
  }
  void near(const std::string& what, double value, double target, double tol) {
    add(what, std::abs(value - target) <= tol,
        "|" + format_double(value) + " - " + format_double(target) + "| <= " + format_double(tol));
  }
  void truth(const std::string& what, bool ok, const std::string& detail = {}) { add(what, ok, detail); }

  bool passed() const { return failures_.empty(); }
  const std::string& summary() const { return summary_; }
  const std::vector<std::string>& failures() const { return failures_; }

 private:
  void add(const std::string& what, bool ok, const std::string& detail) {
    if (!ok) failures_.push_back(what + ": " + detail);
    ++count_;
    summary_ = std::to_string(count_) + " checks";
  }
  std::size_t count_ = 0;
  std::string summary_ = "0 checks";
  std::vector<std::string> failures_;
};

RunConfig fixture(const std::string& name) { return load_config(kFixtures / (name + ".json")); }

ordered_json metrics_of(const std::string& command, const std::string& name) {
  RunOptions opt;
  opt.out_dir = (kScratch / "runs" / name).string();
  return run(command, fixture(name), opt).metrics;
}

double num(const ordered_json& m, const std::string& key) {
  if (!m.contains(key) || !m[key].is_number()) return NAN;
  return m[key].get<double>();
}

// Laplace expansion along the first row; independent of the LU determinant.
double cofactor_det(const std::vector<std::vector<double>>& a) {
  const std::size_t n = a.size();
  if (n == 1) return a[0][0];
  double det = 0.0;
  for (std::size_t col = 0; col < n; ++col) {
    std::vector<std::vector<double>> minor;
    for (std::size_t r = 1; r < n; ++r) {
      std::vector<double> row;
      for (std::size_t c = 0; c < n; ++c)
        if (c != col) row.push_back(a[r][c]);
      minor.push_back(std::move(row));
    }
    det += (col % 2 ? -1.0 : 1.0) * a[0][col] * cofactor_det(minor);
  }
  return det;
}

std::vector<PhasePoint> cloud(SplitMix64& rng, std::size_t count, double width) {
  std::vector<PhasePoint> out;
  for (std::size_t k = 0; k < count; ++k) {
    std::vector<double> x(4);
    for (auto& v : x) v = rng.uniform(-width, width);
    out.emplace_back(std::move(x));
  }
  return out;
}

void criterion1(Checks& c) {
  SplitMix64 rng(101);
  const auto pts = cloud(rng, 100, 2.0);
  double canonical = 0.0, constant = 0.0, violating = INFINITY, named = INFINITY;
  const auto s_can = PoissonStructure::canonical(2);
  const auto s_const = PoissonStructure::constant_theta_f(0.7, 2.3);
  const auto s_bad = fixture("jacobi_violating").require_structure();
  for (const auto& x : pts) {
    canonical = std::max(canonical, jacobi_residual(s_can, x).generic_max);
    constant = std::max(constant, jacobi_residual(s_const, x).generic_max);
    const auto r = jacobi_residual(s_bad, x);
    violating = std::min(violating, r.generic_max);
    named = std::min(named, std::abs(r.named_value("{theta12,p2}").value_or(0.0)));
  }
  c.leq("canonical generic residual", canonical, 1e-12);
  c.leq("constant theta-F generic residual", constant, 1e-12);
  c.geq("violating generic residual", violating, 0.9);
  c.near("violating first identity", named, 1.0, 1e-12);
  const auto m = metrics_of("check-jacobi", "jacobi_violating");
  c.geq("violating fixture run", num(m, "generic_max"), 0.9);
}

void criterion2(Checks& c) {
  SplitMix64 rng(202);
  double inverse = 0.0, det_gap = 0.0, det_oracle = 0.0;
  int accepted = 0;
  while (accepted < 50) {
    const double th = rng.uniform(-3, 3), F = rng.uniform(-3, 3);
    if (std::abs(1 - th * F) < 0.1) continue;
    ++accepted;
    const Matrix t = theta_matrix(PoissonStructure::constant_theta_f(th, F), PhasePoint{0, 0, 0, 0});
    const Matrix prod = t * constant_omega(th, F);
    std::vector<std::vector<double>> rows(4, std::vector<double>(4));
    for (std::size_t a = 0; a < 4; ++a)
      for (std::size_t b = 0; b < 4; ++b) {
        inverse = std::max(inverse, std::abs(prod(a, b) - (a == b ? 1.0 : 0.0)));
        rows[a][b] = t(a, b);
      }
    const double expected = (th * F - 1) * (th * F - 1);
    det_gap = std::max(det_gap, std::abs(determinant(t) - expected));
    det_oracle = std::max(det_oracle, std::abs(cofactor_det(rows) - expected));
  }
  c.leq("Theta * omega - I", inverse, 1e-12);
  c.leq("det Theta - (theta F - 1)^2", det_gap, 1e-12);
  c.leq("cofactor det - (theta F - 1)^2", det_oracle, 1e-12);
}

void criterion3(Checks& c) {
  const auto cfg = fixture("integrate_casimir_theta");
  const auto& s = cfg.require_structure();
  c.truth("five distinct Hamiltonians", cfg.hamiltonians.size() == 5);
  for (std::size_t k = 0; k < cfg.hamiltonians.size(); ++k) {
    FlowProblem p{s, cfg.hamiltonians[k], PhasePoint(cfg.integrator->x0), 1e-3, 10.0, Method::RK4};
    const auto tr = integrate(p);
    const std::string tag = " [" + cfg.hamiltonian_sources[k] + "]";
    c.truth("full horizon" + tag, !tr.truncated);
    c.leq("theta drift" + tag, drift(tr.series("theta12")).max_abs_drift, 1e-7);
    c.leq("F drift" + tag, drift(tr.series("F12")).max_abs_drift, 1e-7);
  }
}

void criterion4(Checks& c) {
  const Expression H = parse("(p1^2+p2^2+q1^2+q2^2)/2");
  FlowProblem p{PoissonStructure::constant_theta_f(1, 1), H, PhasePoint{1, 0, 0, -1}, 1e-3, 10.0};
  const auto tr = integrate(p);
  const auto c0 = reduction_constants(PoissonStructure::constant_theta_f(1, 1), PhasePoint{1, 0, 0, -1});
  double d1 = 0.0, d2 = 0.0;
  for (const auto& x : tr.states) {
    d1 = std::max(d1, std::abs(x[0] + x[3] - c0[0]));
    d2 = std::max(d2, std::abs(x[1] - x[2] - c0[1]));
  }
  c.leq("|q1 + theta p2 - c1|", d1, 1e-8);
  c.leq("|q2 - theta p1 - c2|", d2, 1e-8);
  const auto m = metrics_of("sweep", "sweep_near_singular");
  c.near("c drift slope in log-log", num(m, "slope"), 1.0, 0.2);
  const double eps[] = {0.1, 0.01, 0.001, 0.0001};
  for (std::size_t k = 1; k < 4; ++k)
    c.truth("c drift shrinks at eps=" + format_double(eps[k]),
            num(m, detail::tagged("c_drift", "eps", eps[k])) < num(m, detail::tagged("c_drift", "eps", eps[k - 1])));
}

void criterion5(Checks& c) {
  for (const char* name : {"reduce_q1_over_p2", "reduce_q2_over_p1", "reduce_difference_ratio"}) {
    const auto cfg = fixture(name);
    const auto& s = cfg.require_structure();
    SplitMix64 rng(cfg.seed);
    const auto leaf = leaf_walk(s, PhasePoint(cfg.reduction->reference), 200, cfg.filters, rng);
    const std::string tag = std::string(" [") + name + "]";
    c.truth("200 points" + tag, leaf.points.size() == 200, std::to_string(leaf.points.size()));
    const auto rr = check_reduction(s, leaf.points);
    c.truth("reduction condition holds" + tag, rr.reduced);
    c.leq("theta_red spread" + tag, rr.spread, 1e-9);
    double tv = 0.0;
    for (const auto& x : leaf.points) tv = std::max(tv, total_variation_residual(s, x).max());
    c.leq("total variation residual" + tag, tv, 1e-9);
  }
}

void criterion6(Checks& c) {
  const auto m = metrics_of("reduce", "reduce_oscillator");
  c.near("theta + 1/theta", num(m, "omega_red"), 2.0, 1e-12);
  c.near("reduced zero-crossing frequency", num(m, "reduced_frequency"), 2.0, 1e-3);
  c.leq("full eps=1e-4 frequency gap", num(m, "frequency_gap"), 5e-3);
  c.near("spacing, definitional normalization", num(m, "spacing_definitional"), num(m, "omega_red"), 1e-9);
  c.near("spacing, |theta| normalization", num(m, "spacing_scaled"), std::abs(num(m, "theta_red.12")) * num(m, "omega_red"),
         1e-9);
  c.leq("E_n affine, definitional", num(m, "affine_residual_definitional"), 1e-9);
  c.leq("E_n affine, |theta| normalization", num(m, "affine_residual_scaled"), 1e-9);
}

Expression random_hamiltonian(SplitMix64& rng) {
  std::ostringstream h;
  h.precision(17);
  h << rng.uniform(-1, 1) << "*q1^2 + " << rng.uniform(-1, 1) << "*q2*p1 + " << rng.uniform(-1, 1) << "*sin(p2) + "
    << rng.uniform(-1, 1) << "*q1*p2^2 + " << rng.uniform(-1, 1) << "*exp(0.3*q2)";
  return parse(h.str());
}

void criterion7(Checks& c) {
  const auto cfg = fixture("jacobi_planar");
  const auto& s = cfg.require_structure();
  SplitMix64 rng(303);
  const auto pts = cloud(rng, 100, 1.0);
  double jac = 0.0, combos = 0.0, tdi = 0.0;
  bool all_four = true;
  for (int k = 0; k < 3; ++k) {
    const auto H = random_hamiltonian(rng);
    const auto f = random_hamiltonian(rng);
    for (const auto& x : pts) {
      if (k == 0) jac = std::max(jac, jacobi_residual(s, x).generic_max);
      const auto v = vanishing_combinations(s, H, x);
      all_four = all_four && v.size() == 4;
      combos = std::max(combos, max_abs(v));
      tdi = std::max(tdi, time_derivative_identity(s, H, f, x));
    }
  }
  c.truth("four combinations reported", all_four);
  c.leq("planar fixture Jacobi residual", jac, 1e-12);
  c.leq("linear combinations of time derivatives", combos, 1e-12);
  c.leq("D-operator total-derivative identity", tdi, 1e-9);
  const auto m = metrics_of("reduce", "reduce_planar_four");
  c.truth("four nonconstant functions", num(m, "counting.nonconstant") == 4.0);
  c.truth("constancy not implied", m.value("counting.status", std::string{}) == "constancy not implied",
          m.value("counting.status", std::string{}));
  c.truth("constancy not claimed", m.value("counting.constancy_claimed", true) == false);
  c.leq("theta F / (g11 g22) = 1", num(m, "counting.ratio_residual"), 1e-12);
}

void criterion8(Checks& c) {
  for (const char* name : {"hodograph_linear", "hodograph_log"}) {
    const auto m = metrics_of("hodograph", name);
    c.leq(std::string("PDE residual [") + name + "]", num(m, "pde_residual_max"), 1e-8);
  }
  const auto& hc = *fixture("hodograph_linear").hodograph;
  double max_abs_x = 0.0;
  for (int i = 0; i < hc.grid.nx; ++i) max_abs_x = std::max(max_abs_x, std::abs(hc.grid.x(i)));
  const std::vector<double> alphas{1, 10, 100};
  const auto table = limit_sweep(HodographKind::Linear, alphas, hc.grid);
  const double expected[] = {0.5, 0.05, 0.005};
  for (std::size_t k = 0; k < 3; ++k) {
    const double alpha = table.rows[k].alpha;
    c.near("max|u + y/x| at alpha=" + format_double(alpha), table.rows[k].max_dev_u, max_abs_x / (2 * alpha), 1e-12);
    c.near("tabulated value at alpha=" + format_double(alpha), table.rows[k].max_dev_u, expected[k], 1e-12);
  }
  const auto m = metrics_of("hodograph", "hodograph_loglog");
  c.truth("loglog grid has admissible points", num(m, "points") > 0);
  c.geq("loglog min|u - v|", num(m, "min_abs_u_minus_v"), 1e-6);
  c.leq("loglog PDE residual", num(m, "pde_residual_max"), 1e-8);
}

std::string command_for(const std::string& stem) {
  if (stem.starts_with("jacobi")) return "check-jacobi";
  if (stem.starts_with("integrate")) return "integrate";
  if (stem.starts_with("sweep")) return "sweep";
  if (stem.starts_with("hodograph")) return "hodograph";
  return "reduce";
}

void criterion9(Checks& c) {
  std::vector<fs::path> configs;
  for (const auto& e : fs::directory_iterator(kFixtures))
    if (e.path().extension() == ".json") configs.push_back(e.path());
  std::sort(configs.begin(), configs.end());
  for (const auto& cfg : configs) {
    const std::string stem = cfg.stem().string();
    std::vector<fs::path> dirs;
    for (const char* rep : {"a", "b"}) {
      const fs::path dir = kScratch / "determinism" / rep / stem;
      fs::remove_all(dir);
      const std::string cmd =
          kCli + " " + command_for(stem) + " --config " + cfg.string() + " --out " + dir.string() + " >/dev/null 2>&1";
      const int status = std::system(cmd.c_str());
      c.truth("exit 0 [" + stem + "/" + rep + "]", WIFEXITED(status) && WEXITSTATUS(status) == 0);
      dirs.push_back(dir);
    }
    std::size_t files = 0;
    for (const auto& e : fs::directory_iterator(dirs[0])) {
      const fs::path other = dirs[1] / e.path().filename();
      c.truth("identical " + stem + "/" + e.path().filename().string(),
              fs::exists(other) && read_file(e.path()) == read_file(other));
      ++files;
    }
    c.truth("artifacts written [" + stem + "]", files >= 2, std::to_string(files));
  }
  c.truth("every fixture exercised", configs.size() >= 19, std::to_string(configs.size()));
}

struct Criterion {
  int id;
  const char* title;
  std::function<void(Checks&)> body;
  double time_limit;  // seconds; 0 means unbounded
};

}  // namespace

int main() {
  fs::create_directories(kScratch);
  const std::vector<Criterion> criteria = {
      {1, "Jacobi suite", criterion1, 1.0},
      {2, "inverse pair and determinant", criterion2, 0.0},
      {3, "theta and F conserved along five flows", criterion3, 30.0},
      {4, "reduction constants and near-singular drift", criterion4, 0.0},
      {5, "constant reduced bracket on nonconstant fixtures", criterion5, 0.0},
      {6, "reduced oscillator frequency and spectrum", criterion6, 0.0},
      {7, "general planar structures", criterion7, 0.0},
      {8, "hodograph families", criterion8, 10.0},
      {9, "determinism", criterion9, 0.0},
  };
  bool all = true;
  for (const auto& cr : criteria) {
    Checks checks;
    const auto start = std::chrono::steady_clock::now();
    try {
      cr.body(checks);
    } catch (const std::exception& e) {
      checks.truth("no exception", false, e.what());
    }
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (cr.time_limit > 0) checks.leq("runtime seconds", seconds, cr.time_limit);
    all = all && checks.passed();
    char wall[32];
    std::snprintf(wall, sizeof wall, "%.3f", seconds);
    std::cout << (checks.passed() ? "PASS" : "FAIL") << " criterion " << cr.id << ": " << cr.title << " ("
              << checks.summary() << ", " << wall << " s)\n";
    for (const auto& f : checks.failures()) std::cout << "    " << f << "\n";
  }
  return all ? 0 : 1;
}
