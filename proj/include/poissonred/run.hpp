#ifndef POISSONRED_RUN_HPP
#define POISSONRED_RUN_HPP

// Command pipelines behind the command-line tool.  Each command computes a
// flat set of named metrics, checks the configured expectations against
// them and writes CSV artifacts plus report.json to the output directory.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "poissonred/config.hpp"
#include "poissonred/dynamics.hpp"
#include "poissonred/hodograph.hpp"
#include "poissonred/io.hpp"
#include "poissonred/poisson.hpp"
#include "poissonred/random.hpp"
#include "poissonred/reduction.hpp"

namespace poissonred {

using ordered_json = nlohmann::ordered_json;

inline const std::vector<std::string>& command_names() {
  static const std::vector<std::string> names{"check-jacobi", "integrate", "reduce", "sweep", "hodograph"};
  return names;
}

struct RunOptions {
  std::optional<std::filesystem::path> out_dir;
  std::optional<std::uint64_t> seed;
  std::optional<double> tol;
};

struct AssertionResult {
  std::string name;
  std::string condition;  // max, min, near, equals
  ordered_json value;
  ordered_json bound;
  double tolerance = 0.0;
  std::string anchor;
  bool passed = false;
};

struct RunReport {
  std::string command;
  std::string digest;
  std::uint64_t seed = 0;
  std::optional<double> tol_override;
  ordered_json metrics = ordered_json::object();
  ordered_json extra = ordered_json::object();
  std::vector<AssertionResult> assertions;
  std::vector<std::string> artifacts;
  std::optional<std::string> error;

  bool passed() const {
    if (error) return false;
    return std::all_of(assertions.begin(), assertions.end(), [](const auto& a) { return a.passed; });
  }

  ordered_json to_json() const {
    ordered_json j;
    j["command"] = command;
    j["config_digest"] = digest;
    j["seed"] = seed;
    j["rng_algorithm"] = SplitMix64::algorithm;
    j["tolerance_override"] = tol_override ? ordered_json(*tol_override) : ordered_json(nullptr);
    j["passed"] = passed();
    if (error) j["error"] = *error;
    ordered_json as = ordered_json::array();
    for (const auto& a : assertions) {
      ordered_json x;
      x["name"] = a.name;
      x["condition"] = a.condition;
      x["value"] = a.value;
      x["bound"] = a.bound;
      x["tolerance"] = a.tolerance;
      x["anchor"] = a.anchor;
      x["passed"] = a.passed;
      as.push_back(std::move(x));
    }
    j["assertions"] = std::move(as);
    j["metrics"] = metrics;
    for (const auto& [k, v] : extra.items()) j[k] = v;
    j["artifacts"] = artifacts;
    return j;
  }
};

namespace detail {

// What each metric family checks, in words; attached to every assertion.
inline std::string anchor_for(std::string_view metric) {
  static const std::vector<std::pair<std::string_view, std::string_view>> table{
      {"generic_max", "Jacobi identity of the bracket over all coordinate triples"},
      {"named.", "named Jacobi constraint on the structure functions"},
      {"inverse_residual", "constant symplectic form inverts the bracket matrix"},
      {"det_residual", "det Theta equals (theta F - 1)^2"},
      {"det_", "determinant of the bracket matrix"},
      {"vanishing_max", "velocity combinations vanish on a degenerate bracket"},
      {"time_derivative_max", "total time derivative expanded in D-operators"},
      {"d_operator", "linear dependence of the D-operators on a degenerate bracket"},
      {"drift.H", "energy conservation along the flow"},
      {"drift.c", "reduction constants frozen along the flow"},
      {"drift.", "structure function constant along the flow"},
      {"truncated", "flow stayed finite over the integration window"},
      {"near_degenerate", "bracket determinant approached zero along the flow"},
      {"frequency", "oscillation frequency from zero crossings"},
      {"condition_residual", "degeneracy condition on the sampled points"},
      {"theta_f_residual", "degeneracy condition theta F = 1"},
      {"matrix_condition", "degeneracy condition theta F = -1 (matrix form)"},
      {"planar_condition", "planar degeneracy theta F - g11 g22 + g12 g21 = 0"},
      {"spread", "reduced bracket constant on the constraint surface"},
      {"bracket_spread", "every bracket entry constant on the sampled set"},
      {"dual_", "surface maps reproduce theta and F as derivatives"},
      {"total_variation_max", "total variation of the reduced brackets vanishes"},
      {"theta_red", "value of the reduced bracket"},
      {"omega_red", "classical frequency of the reduced oscillator"},
      {"reduced_frequency", "reduced flow frequency from zero crossings"},
      {"full_frequency", "near-singular full flow frequency from zero crossings"},
      {"frequency_gap", "full near-singular flow matches the reduced frequency"},
      {"spacing_", "energy levels affine in n with the classical spacing"},
      {"affine_residual_", "energy levels affine in n"},
      {"counting.", "function-counting bound for constancy of the reduced bracket"},
      {"slope", "reduction-constant drift proportional to epsilon"},
      {"c_drift", "reduction-constant drift at fixed epsilon"},
      {"c", "surface label from the reference point"},
      {"pde_", "quasilinear system u_x - v u_y = 0, v_x - u v_y = 0"},
      {"min_abs_jacobian", "hodograph Jacobian stays away from zero"},
      {"min_abs_u_minus_v", "u and v remain distinct"},
      {"product_residual", "loglog product u v = u0 v0 exp(x/alpha)"},
      {"inverse_map_max", "inverse map satisfies y_u + u x_u = 0 and y_v + v x_v = 0"},
      {"max_dev_", "approach to u = v = -y/x as alpha grows"},
      {"max_u_minus_v", "approach to u = v as alpha grows"},
      {"fitted_order", "order of the approach in 1/alpha"},
      {"points", "number of evaluated grid or cloud points"},
  };
  for (const auto& [prefix, text] : table)
    if (metric.substr(0, prefix.size()) == prefix) return std::string(text);
  return "reported quantity";
}

inline std::string tagged(std::string_view base, std::string_view key, double v) {
  return std::string(base) + "[" + std::string(key) + "=" + format_double(v) + "]";
}

inline void put_max(ordered_json& m, const std::string& key, double v) {
  if (!m.contains(key) || !(m[key].get<double>() >= v)) m[key] = v;
}

inline std::vector<std::string> phase_header(const PhaseSpace& sp) {
  return {sp.names().begin(), sp.names().end()};
}

// Seeded uniform cloud around `center`, filtered for admissibility.
inline std::vector<PhasePoint> random_cloud(const PoissonStructure& s, const CloudConfig& c,
                                            std::span<const DomainFilter> filters, SplitMix64& rng) {
  std::vector<PhasePoint> out;
  const std::size_t max_attempts = 50 * c.count + 100;
  for (std::size_t attempt = 0; out.size() < c.count && attempt < max_attempts; ++attempt) {
    std::vector<double> x(c.center.size());
    for (std::size_t a = 0; a < x.size(); ++a) x[a] = c.center[a] + rng.uniform(-c.width, c.width);
    if (admissible(s, x, filters)) out.emplace_back(std::move(x));
  }
  if (out.size() < c.count)
    throw ReductionError("only " + std::to_string(out.size()) + " of " + std::to_string(c.count) +
                         " cloud points are admissible");
  return out;
}

class Pipeline {
 public:
  Pipeline(const RunConfig& cfg, RunReport& report, std::filesystem::path out)
      : cfg_(cfg), report_(report), out_(std::move(out)), rng_(report.seed) {}

  void check_jacobi();
  void integrate_cmd();
  void reduce();
  void sweep();
  void hodograph();

 private:
  void artifact(const std::string& name, const std::string& content) {
    if (!cfg_.write_csv) return;
    write_file(out_ / name, content);
    report_.artifacts.push_back(name);
  }
  ordered_json& m() { return report_.metrics; }
  double reduced_flow_frequency(const ReducedSystem& rs, std::span<const double> q0, double level, double dt,
                                double t_end);

  const RunConfig& cfg_;
  RunReport& report_;
  std::filesystem::path out_;
  SplitMix64 rng_;
};

inline void Pipeline::check_jacobi() {
  const auto& s = cfg_.require_structure();
  if (!cfg_.cloud) throw ConfigError("/cloud", "missing key");
  const auto cloud = random_cloud(s, *cfg_.cloud, cfg_.filters, rng_);
  const auto& sp = s.space();

  std::vector<std::string> named;
  std::vector<std::vector<double>> rows;
  double generic = 0.0, det_min = INFINITY, det_max = 0.0;
  std::vector<double> named_max;
  for (const auto& x : cloud) {
    const auto r = jacobi_residual(s, x);
    if (named.empty())
      for (const auto& nr : r.named) named.push_back(nr.name), named_max.push_back(0.0);
    std::vector<double> row(x.values().begin(), x.values().end());
    row.push_back(r.generic_max);
    for (std::size_t k = 0; k < r.named.size(); ++k) {
      row.push_back(r.named[k].value);
      named_max[k] = std::max(named_max[k], std::abs(r.named[k].value));
    }
    generic = std::max(generic, r.generic_max);
    const double det = std::abs(degeneracy(s, x).det);
    det_min = std::min(det_min, det);
    det_max = std::max(det_max, det);
    rows.push_back(std::move(row));
  }
  m()["points"] = cloud.size();
  m()["generic_max"] = generic;
  for (std::size_t k = 0; k < named.size(); ++k) m()["named." + named[k]] = named_max[k];
  m()["det_min_abs"] = det_min;
  m()["det_max_abs"] = det_max;

  if (s.kind() == StructureKind::ConstantThetaF) {
    const Matrix t = theta_matrix(s, cloud.front());
    const double th = t(0, 1), F = t(2, 3);
    m()["det_residual"] = std::abs(determinant(t) - (th * F - 1) * (th * F - 1));
    if (th * F != 1.0) {
      const Matrix prod = t * constant_omega(th, F);
      double worst = 0.0;
      for (std::size_t a = 0; a < 4; ++a)
        for (std::size_t b = 0; b < 4; ++b) worst = std::max(worst, std::abs(prod(a, b) - (a == b ? 1.0 : 0.0)));
      m()["inverse_residual"] = worst;
    }
  }

  if (!cfg_.hamiltonians.empty()) {
    const bool combos = s.has_theta_f_form() || s.kind() == StructureKind::GeneralPlanar;
    double vanishing = 0.0, tdi = 0.0;
    for (const auto& H : cfg_.hamiltonians)
      for (const auto& x : cloud) {
        if (combos) vanishing = std::max(vanishing, max_abs(vanishing_combinations(s, H, x)));
        if (s.dof() == 2) {
          std::vector<Expression> fs = cfg_.observables;
          if (fs.empty()) fs = {H, Expression::variable("q1")};
          for (const auto& f : fs) tdi = std::max(tdi, time_derivative_identity(s, H, f, x));
        }
      }
    if (combos) m()["vanishing_max"] = vanishing;
    if (s.dof() == 2) m()["time_derivative_max"] = tdi;
  }
  if (s.dof() == 2 && s.kind() == StructureKind::GeneralPlanar) {
    double r_lit = 0.0, r_cor = 0.0, sigma_gap = 0.0;
    for (const auto& x : cloud) {
      const auto d = d_operator_dependence(s, x);
      r_lit = std::max({r_lit, d.residual_literal_1, d.residual_literal_2});
      r_cor = std::max({r_cor, d.residual_corrected_1, d.residual_corrected_2});
      sigma_gap = std::max(sigma_gap, std::abs(d.sigma_corrected - theta_matrix(s, x)(2, 3)));
    }
    m()["d_operator_residual_literal"] = r_lit;
    m()["d_operator_residual_corrected"] = r_cor;
    m()["d_operator_sigma_minus_F"] = sigma_gap;
  }

  auto header = phase_header(sp);
  header.push_back("generic");
  for (const auto& n : named) header.push_back(n);
  CsvTable csv(header);
  for (const auto& r : rows) csv.add_row(r);
  artifact("jacobi.csv", csv.str());
}

inline void Pipeline::integrate_cmd() {
  const auto& s = cfg_.require_structure();
  if (!cfg_.integrator) throw ConfigError("/integrator", "missing key");
  if (cfg_.hamiltonians.empty()) throw ConfigError("/hamiltonian", "missing key");
  const auto& ic = *cfg_.integrator;
  const auto& sp = s.space();
  bool truncated = false, near_degenerate = false;
  double min_det = INFINITY;
  ordered_json per = ordered_json::array();
  for (std::size_t k = 0; k < cfg_.hamiltonians.size(); ++k) {
    FlowProblem p{s, cfg_.hamiltonians[k], PhasePoint(ic.x0), ic.dt, ic.t_end, ic.method, cfg_.monitors};
    const auto tr = integrate(p);
    truncated = truncated || tr.truncated;
    near_degenerate = near_degenerate || tr.near_degenerate;
    min_det = std::min(min_det, tr.min_abs_det);
    ordered_json entry;
    entry["hamiltonian"] = cfg_.hamiltonian_sources[k];
    entry["steps"] = tr.times.size() - 1;
    entry["t_final"] = tr.times.back();
    entry["truncated"] = tr.truncated;
    ordered_json dj = ordered_json::object();
    for (const auto& d : drifts(tr)) {
      put_max(m(), "drift." + d.name, d.max_abs_drift);
      dj[d.name] = d.max_abs_drift;
    }
    entry["max_abs_drift"] = std::move(dj);
    std::vector<double> q1(tr.states.size());
    for (std::size_t i = 0; i < q1.size(); ++i) q1[i] = tr.states[i][0];
    const auto freq = zero_crossing_frequency(tr.times, q1);
    entry["frequency"] = freq ? ordered_json(*freq) : ordered_json(nullptr);
    if (cfg_.hamiltonians.size() == 1 && freq) m()["frequency"] = *freq;
    per.push_back(std::move(entry));

    auto header = phase_header(sp);
    header.insert(header.begin(), "t");
    for (const auto& n : tr.monitor_names) header.push_back(n);
    CsvTable csv(header);
    std::vector<double> row;
    for (std::size_t i = 0; i < tr.times.size(); ++i) {
      row.assign(1, tr.times[i]);
      row.insert(row.end(), tr.states[i].begin(), tr.states[i].end());
      for (const auto& mon : tr.monitors) row.push_back(mon[i]);
      csv.add_row(row);
    }
    artifact(cfg_.hamiltonians.size() == 1 ? "trajectory.csv" : "trajectory_" + std::to_string(k + 1) + ".csv",
             csv.str());
  }
  m()["truncated"] = truncated;
  m()["near_degenerate"] = near_degenerate;
  m()["min_abs_det"] = min_det;
  report_.extra["runs"] = std::move(per);
}

inline double Pipeline::reduced_flow_frequency(const ReducedSystem& rs, std::span<const double> q0, double level,
                                               double dt, double t_end) {
  const VectorField f = [&](std::span<const double> q) { return rs.velocity(q); };
  const auto sol = integrate_field(f, {q0.begin(), q0.end()}, dt, t_end, Method::RK4);
  std::vector<double> q1(sol.states.size());
  for (std::size_t i = 0; i < q1.size(); ++i) q1[i] = sol.states[i][0];
  return zero_crossing_frequency(sol.times, q1, level).value_or(0.0);
}

inline void Pipeline::reduce() {
  const auto& s = cfg_.require_structure();
  if (!cfg_.reduction) throw ConfigError("/reduction", "missing key");
  const auto& rc = *cfg_.reduction;
  const PhasePoint ref(rc.reference);
  if (!admissible(s, ref.values(), cfg_.filters))
    throw ConfigError("/reduction/reference", "reference point is not admissible");
  const auto& sp = s.space();
  const bool surface = rc.sampler == "surface" && s.has_theta_f_form();
  const auto sample = surface ? sample_surface(s, ref, rc.count, rc.width, cfg_.filters, rng_)
                              : leaf_walk(s, ref, rc.count, cfg_.filters, rng_);
  m()["sampler"] = surface ? "surface" : "leaf";
  m()["points"] = sample.points.size();
  m()["attempts"] = sample.attempts;
  if (sample.points.empty()) throw ReductionError("no admissible point on the sampled set");

  if (!s.has_theta_f_form()) {
    const auto cr = counting_analysis(s, sample.points);
    m()["counting.nonconstant"] = cr.nonconstant;
    m()["counting.bound"] = cr.bound;
    std::string names;
    for (const auto& n : cr.nonconstant_names) names += (names.empty() ? "" : " ") + n;
    m()["counting.nonconstant_names"] = names;
    m()["counting.constancy_claimed"] = cr.constancy_claimed;
    m()["counting.status"] = cr.status;
    m()["bracket_spread"] = cr.bracket_spread;
    if (cr.ratio_residual) m()["counting.ratio_residual"] = *cr.ratio_residual;
    double det = 0.0;
    for (const auto& x : sample.points) det = std::max(det, std::abs(degeneracy(s, x).det));
    m()["det_max_abs"] = det;
    auto header = phase_header(sp);
    CsvTable csv(header);
    for (const auto& x : sample.points) csv.add_row(x.values());
    artifact("leaf.csv", csv.str());
    return;
  }

  const auto rr = check_reduction(s, sample.points);
  m()["reduced"] = rr.reduced;
  m()["admissible"] = rr.admissible;
  m()["condition_residual"] = rr.condition_residual;
  if (rr.theta_f_residual) m()["theta_f_residual"] = *rr.theta_f_residual;
  if (rr.matrix_condition) m()["matrix_condition"] = *rr.matrix_condition;
  m()["spread"] = rr.spread;
  m()["bracket_spread"] = rr.bracket_spread;
  if (rr.dual_dq_dp) m()["dual_dq_dp"] = *rr.dual_dq_dp;
  if (rr.dual_dp_dq) m()["dual_dp_dq"] = *rr.dual_dp_dq;
  const int n = s.dof();
  if (rr.reduced) {
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j) m()["theta_red." + pair_label(i, j)] = rr.theta_red(i, j);
    for (int i = 0; i < n; ++i) m()["c" + std::to_string(i + 1)] = rr.constants[i];
  }
  double tv = 0.0;
  for (const auto& x : sample.points) tv = std::max(tv, total_variation_residual(s, x).max());
  m()["total_variation_max"] = tv;

  {
    auto header = phase_header(sp);
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j) header.push_back("theta" + pair_label(i, j));
    CsvTable csv(header);
    for (const auto& x : sample.points) {
      std::vector<double> row(x.values().begin(), x.values().end());
      const Matrix th = theta_block(s, x.values());
      for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) row.push_back(th(i, j));
      csv.add_row(row);
    }
    artifact("surface.csv", csv.str());
  }

  if (!rr.reduced || cfg_.hamiltonians.empty() || n != 2) return;
  const auto& H = cfg_.hamiltonians.front();
  const auto rs = build_reduced(s, H, rr);
  const std::vector<double> q_ref(rc.reference.begin(), rc.reference.begin() + n);
  SpectrumReport spec;
  try {
    spec = reduced_spectrum_and_frequency(rs, q_ref, rc.n_max);
  } catch (const ReductionError& e) {
    m()["spectrum"] = e.what();
    return;
  }
  const double at = std::abs(rr.theta_red(0, 1));
  m()["spectrum"] = "available";
  m()["omega_red"] = spec.omega_red;
  m()["spacing_definitional"] = spec.spacing_definitional;
  m()["spacing_scaled"] = spec.spacing_scaled;
  m()["spacing_definitional_gap"] = std::abs(spec.spacing_definitional - spec.omega_red);
  m()["spacing_scaled_gap"] = std::abs(spec.spacing_scaled - at * spec.omega_red);
  m()["affine_residual_definitional"] = spec.affine_residual_definitional;
  m()["affine_residual_scaled"] = spec.affine_residual_scaled;
  const double f_red = reduced_flow_frequency(rs, q_ref, spec.center[0], rc.reduced_dt, rc.reduced_t_end);
  m()["reduced_frequency"] = f_red;
  m()["reduced_frequency_gap"] = std::abs(f_red - spec.omega_red);
  if (rc.full_epsilon && s.kind() == StructureKind::ConstantThetaF) {
    const double th = rr.theta_red(0, 1);
    FlowProblem p{PoissonStructure::constant_theta_f(th, (1.0 - *rc.full_epsilon) / th), H, ref, rc.reduced_dt,
                  rc.reduced_t_end};
    const auto tr = integrate(p);
    std::vector<double> q1(tr.states.size());
    for (std::size_t i = 0; i < q1.size(); ++i) q1[i] = tr.states[i][0];
    const double f_full = zero_crossing_frequency(tr.times, q1, spec.center[0]).value_or(0.0);
    m()["full_frequency"] = f_full;
    m()["frequency_gap"] = std::abs(f_full - f_red);
  }
  CsvTable csv({"n", "E_definitional", "E_scaled"});
  for (std::size_t k = 0; k < spec.E_definitional.size(); ++k)
    csv.add_row({static_cast<double>(k), spec.E_definitional[k], spec.E_scaled[k]});
  artifact("spectrum.csv", csv.str());
}

inline void Pipeline::sweep() {
  if (!cfg_.sweep) throw ConfigError("/sweep", "missing key");
  if (!cfg_.integrator) throw ConfigError("/integrator", "missing key");
  if (cfg_.n != 2) throw ConfigError("/phase_space/n", "sweep needs n = 2");
  const auto& H = cfg_.require_hamiltonian();
  const auto& sc = *cfg_.sweep;
  const auto& ic = *cfg_.integrator;
  const PhasePoint x0(ic.x0);
  const auto r = near_singular_sweep(sc.theta, H, x0, sc.epsilons, ic.dt, ic.t_end, ic.method);
  m()["slope"] = r.slope;
  m()["intercept"] = r.intercept;
  bool truncated = false;
  CsvTable csv({"epsilon", "c_drift", "frequency", "truncated"});
  for (const auto& row : r.rows) {
    m()[tagged("c_drift", "eps", row.epsilon)] = row.c_drift;
    if (row.frequency) m()[tagged("frequency", "eps", row.epsilon)] = *row.frequency;
    truncated = truncated || row.truncated;
    csv.add_row({row.epsilon, row.c_drift, row.frequency.value_or(NAN), row.truncated ? 1.0 : 0.0});
  }
  m()["truncated"] = truncated;
  // Exactly degenerate member of the family, for the frequency comparison.
  const auto s0 = PoissonStructure::constant_theta_f(sc.theta, 1.0 / sc.theta);
  const std::vector<PhasePoint> one{x0};
  const auto rs = build_reduced(s0, H, check_reduction(s0, one));
  const std::vector<double> q0{ic.x0[0], ic.x0[1]};
  double level = 0.0;
  try {
    level = reduced_spectrum_and_frequency(rs, q0, 1).center[0];
  } catch (const ReductionError&) {
  }
  const double f_red = reduced_flow_frequency(rs, q0, level, ic.dt, ic.t_end);
  m()["reduced_frequency"] = f_red;
  auto smallest = std::min_element(r.rows.begin(), r.rows.end(),
                                   [](const auto& a, const auto& b) { return a.epsilon < b.epsilon; });
  if (smallest->frequency) m()["frequency_gap"] = std::abs(*smallest->frequency - f_red);
  artifact("sweep.csv", csv.str());
}

inline void Pipeline::hodograph() {
  if (!cfg_.hodograph) throw ConfigError("/hodograph", "missing key");
  const auto& hc = *cfg_.hodograph;
  const auto fam = build_family(hc.kind, hc.params);
  ordered_json units = ordered_json::object();
  if (hc.params.alpha) units["alpha"] = unit_of(hc.kind, "alpha");
  if (hc.params.u0) units["u0"] = unit_of(hc.kind, "u0");
  if (hc.params.v0) units["v0"] = unit_of(hc.kind, "v0");
  report_.extra["family"] = std::string(to_string(hc.kind));
  report_.extra["units"] = std::move(units);

  const auto r = pde_residual(fam, hc.grid);
  m()["points"] = r.points;
  m()["excluded"] = r.excluded;
  m()["pde_res1"] = r.max_res1;
  m()["pde_res2"] = r.max_res2;
  m()["pde_residual_max"] = std::max(r.max_res1, r.max_res2);
  if (r.points) {
    m()["min_abs_jacobian"] = r.min_abs_jacobian;
    m()["min_abs_u_minus_v"] = r.min_abs_u_minus_v;
  }
  double product = 0.0, inverse = 0.0;
  CsvTable fields({"x", "y", "u", "v"});
  scan(fam, hc.grid, [&](double x, double y, const std::array<double, 2>& uv) {
    fields.add_row({x, y, uv[0], uv[1]});
    if (hc.kind == HodographKind::LogLog)
      product = std::max(product, std::abs(uv[0] * uv[1] - *hc.params.u0 * *hc.params.v0 *
                                                                std::exp(x / *hc.params.alpha)));
    if (hc.kind == HodographKind::CustomFG || hc.kind == HodographKind::Linear) {
      const auto inv = inverse_map_residual(fam, uv[0], uv[1]);
      inverse = std::max({inverse, inv[0], inv[1]});
    }
  });
  if (hc.kind == HodographKind::LogLog) m()["product_residual"] = product;
  if (hc.kind == HodographKind::CustomFG || hc.kind == HodographKind::Linear) m()["inverse_map_max"] = inverse;
  artifact("fields.csv", fields.str());

  if (hc.alphas.empty()) return;
  const auto t = limit_sweep(hc.kind, hc.alphas, hc.grid, hc.params);
  m()["fitted_order"] = t.fitted_order;
  CsvTable csv({"alpha", "max_dev_u", "max_dev_v", "max_u_minus_v", "fitted_order"});
  for (const auto& row : t.rows) {
    m()[tagged("max_dev_u", "alpha", row.alpha)] = row.max_dev_u;
    m()[tagged("max_dev_v", "alpha", row.alpha)] = row.max_dev_v;
    m()[tagged("max_u_minus_v", "alpha", row.alpha)] = row.max_u_minus_v;
    csv.add_row({row.alpha, row.max_dev_u, row.max_dev_v, row.max_u_minus_v, t.fitted_order});
  }
  artifact("limit.csv", csv.str());
}

inline AssertionResult evaluate(const Expectation& e, const ordered_json& metrics, std::optional<double> tol) {
  AssertionResult a;
  a.name = e.metric;
  a.anchor = e.anchor.value_or(anchor_for(e.metric));
  a.value = metrics.contains(e.metric) ? metrics[e.metric] : ordered_json(nullptr);
  const ordered_json& v = a.value;
  auto num = [&]() -> std::optional<double> {
    if (v.is_number()) return v.get<double>();
    if (v.is_boolean()) return v.get<bool>() ? 1.0 : 0.0;
    return std::nullopt;
  };
  switch (e.op) {
    case Expectation::Op::Max: {
      const double bound = tol.value_or(e.value);
      a.condition = "max";
      a.bound = bound;
      a.tolerance = bound;
      a.passed = num() && *num() <= bound;
      break;
    }
    case Expectation::Op::Min:
      a.condition = "min";
      a.bound = e.value;
      a.tolerance = e.value;
      a.passed = num() && *num() >= e.value;
      break;
    case Expectation::Op::Near: {
      a.condition = "near";
      a.bound = e.value;
      a.tolerance = tol.value_or(e.tol);
      a.passed = num() && std::abs(*num() - e.value) <= a.tolerance;
      break;
    }
    case Expectation::Op::Equals:
      a.condition = "equals";
      a.tolerance = 0.0;
      if (e.is_text) {
        a.bound = e.text;
        a.passed = v.is_string() && v.get<std::string>() == e.text;
      } else {
        a.bound = e.value;
        a.passed = num() && *num() == e.value;
      }
      break;
  }
  return a;
}

}  // namespace detail

class CommandError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Runs one command.  Numeric failures inside the pipeline propagate after
/// the report (with the error recorded) has been written.
inline RunReport run(std::string_view command, const RunConfig& cfg, const RunOptions& opt = {}) {
  const auto& names = command_names();
  if (std::find(names.begin(), names.end(), command) == names.end())
    throw CommandError("unknown command '" + std::string(command) + "'");
  RunReport report;
  report.command = std::string(command);
  report.digest = cfg.digest;
  report.seed = opt.seed.value_or(cfg.seed);
  report.tol_override = opt.tol;
  const auto out = opt.out_dir.value_or(cfg.out_dir);
  std::filesystem::create_directories(out);
  auto write_report = [&] { write_file(out / "report.json", report.to_json().dump(2) + "\n"); };
  detail::Pipeline p(cfg, report, out);
  try {
    if (command == "check-jacobi") p.check_jacobi();
    else if (command == "integrate") p.integrate_cmd();
    else if (command == "reduce") p.reduce();
    else if (command == "sweep") p.sweep();
    else p.hodograph();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    report.error = e.what();
    write_report();
    throw;
  }
  for (const auto& e : cfg.expect) report.assertions.push_back(detail::evaluate(e, report.metrics, opt.tol));
  write_report();
  return report;
}

}  // namespace poissonred

#endif  // POISSONRED_RUN_HPP
