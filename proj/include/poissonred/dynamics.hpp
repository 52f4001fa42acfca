#ifndef POISSONRED_DYNAMICS_HPP
#define POISSONRED_DYNAMICS_HPP

// Equations of motion x'_a = Theta_ab dH/dx_b, fixed-step integration with
// monitored observables, and the pointwise identities that hold along flows.

#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "poissonred/expr.hpp"
#include "poissonred/linalg.hpp"
#include "poissonred/poisson.hpp"

namespace poissonred {

inline std::vector<double> velocity(const PoissonStructure& s, const Expression& H, std::span<const double> x) {
  return theta_matrix(s, x).apply(gradient(H, s.space().bind(x)));
}

inline std::vector<double> velocity(const PoissonStructure& s, const Expression& H, const PhasePoint& x) {
  return velocity(s, H, x.values());
}

enum class Method { RK4, ImplicitMidpoint };

inline std::string_view to_string(Method m) { return m == Method::RK4 ? "rk4" : "midpoint"; }

using VectorField = std::function<std::vector<double>(std::span<const double>)>;

namespace detail {

inline std::vector<double> axpy(std::span<const double> x, double h, std::span<const double> v) {
  std::vector<double> out(x.begin(), x.end());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += h * v[i];
  return out;
}

inline bool all_finite(std::span<const double> x) {
  for (double v : x)
    if (!std::isfinite(v)) return false;
  return true;
}

inline std::vector<double> rk4_step(const VectorField& f, std::span<const double> x, double h) {
  const auto k1 = f(x);
  const auto k2 = f(axpy(x, h / 2, k1));
  const auto k3 = f(axpy(x, h / 2, k2));
  const auto k4 = f(axpy(x, h, k3));
  std::vector<double> out(x.begin(), x.end());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += h / 6 * (k1[i] + 2 * k2[i] + 2 * k3[i] + k4[i]);
  return out;
}

// y = x + h f((x + y) / 2), solved by fixed-point iteration from an explicit
// Euler predictor.
inline std::vector<double> midpoint_step(const VectorField& f, std::span<const double> x, double h) {
  std::vector<double> y = axpy(x, h, f(x));
  for (int it = 0; it < 100; ++it) {
    std::vector<double> mid(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) mid[i] = 0.5 * (x[i] + y[i]);
    if (!all_finite(mid)) return y;
    const auto next = axpy(x, h, f(mid));
    double delta = 0.0, scale = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      delta = std::max(delta, std::abs(next[i] - y[i]));
      scale = std::max(scale, std::abs(next[i]));
    }
    y = next;
    if (delta <= 1e-15 * (1.0 + scale)) break;
  }
  return y;
}

}  // namespace detail

inline std::vector<double> step(Method m, const VectorField& f, std::span<const double> x, double h) {
  return m == Method::RK4 ? detail::rk4_step(f, x, h) : detail::midpoint_step(f, x, h);
}

/// Fixed-step solution of x' = f(x) on [0, t_end]; times are k*dt, with the
/// last step shortened if t_end is not a multiple of dt.
struct FieldSolution {
  std::vector<double> times;
  std::vector<std::vector<double>> states;
  bool truncated = false;
};

inline std::size_t step_count(double dt, double t_end) {
  return static_cast<std::size_t>(std::ceil(t_end / dt - 1e-9));
}

inline FieldSolution integrate_field(const VectorField& f, std::vector<double> x0, double dt, double t_end,
                                     Method m, const std::function<void(std::span<const double>)>& on_state = {}) {
  if (!(dt > 0) || !(t_end > 0) || !(dt < t_end)) throw std::invalid_argument("need 0 < dt < t_end");
  FieldSolution sol;
  const std::size_t n = step_count(dt, t_end);
  sol.times.reserve(n + 1);
  sol.states.reserve(n + 1);
  sol.times.push_back(0.0);
  sol.states.push_back(std::move(x0));
  if (on_state) on_state(sol.states.back());
  for (std::size_t k = 1; k <= n; ++k) {
    const double t = k == n ? t_end : static_cast<double>(k) * dt;
    auto next = step(m, f, sol.states.back(), t - sol.times.back());
    if (!detail::all_finite(next)) {
      sol.truncated = true;
      break;
    }
    sol.times.push_back(t);
    sol.states.push_back(std::move(next));
    if (on_state) on_state(sol.states.back());
  }
  return sol;
}

struct Monitor {
  std::string name;
  Expression expr;
};

struct FlowProblem {
  PoissonStructure structure;
  Expression hamiltonian;
  PhasePoint x0;
  double dt = 1e-3;
  double t_end = 10.0;
  Method method = Method::RK4;
  std::vector<Monitor> extra_monitors{};
};

struct Trajectory {
  std::vector<double> times;
  std::vector<std::vector<double>> states;
  std::vector<std::string> monitor_names;     // first entry is "H"
  std::vector<std::vector<double>> monitors;  // monitors[j][k] at times[k]
  bool truncated = false;
  bool near_degenerate = false;               // |det Theta| < 1e-8 at some step
  double min_abs_det = std::numeric_limits<double>::infinity();

  const std::vector<double>& series(std::string_view name) const {
    for (std::size_t j = 0; j < monitor_names.size(); ++j)
      if (monitor_names[j] == name) return monitors[j];
    throw std::out_of_range("no monitor named " + std::string(name));
  }
};

/// The structure-derived observables watched along a flow: the bracket
/// functions themselves and, for theta-F kinds, c_m = q_m + theta_mn p_n.
inline std::vector<Monitor> structure_monitors(const PoissonStructure& s) {
  std::vector<Monitor> out;
  const int n = s.dof();
  const auto& sp = s.space();
  auto label = [](int i, int j) { return std::to_string(i + 1) + std::to_string(j + 1); };
  if (s.has_theta_f_form()) {
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j) out.push_back({"theta" + label(i, j), s.theta(i, j)});
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j) out.push_back({"F" + label(i, j), s.field_strength(i, j)});
    for (int m = 0; m < n; ++m) {
      Expression c = Expression::variable(sp.name(sp.q(m)));
      for (int k = 0; k < n; ++k)
        if (k != m) c = c + s.theta(m, k) * Expression::variable(sp.name(sp.p(k)));
      out.push_back({"c" + std::to_string(m + 1), fold_constants(c)});
    }
  } else if (s.kind() == StructureKind::GeneralPlanar) {
    const auto f = s.planar_functions();
    out = {{"theta", f.theta}, {"F", f.F}, {"g11", f.g11}, {"g12", f.g12}, {"g21", f.g21}, {"g22", f.g22}};
  } else {
    for (int a = 0; a < s.dim(); ++a)
      for (int b = a + 1; b < s.dim(); ++b)
        if (!s.entry_is_constant(a, b)) out.push_back({"Theta" + label(a, b), s.entry(a, b)});
  }
  return out;
}

inline Trajectory integrate(const FlowProblem& p) {
  const auto& s = p.structure;
  if (static_cast<int>(p.x0.size()) != s.dim()) throw std::invalid_argument("initial point has wrong dimension");
  for (const auto& v : p.hamiltonian.variables())
    if (!s.space().index_of(v)) throw std::invalid_argument("hamiltonian references '" + v + "'");
  if (!p.hamiltonian.parameters().empty())
    throw std::invalid_argument("hamiltonian has unbound parameter '" + *p.hamiltonian.parameters().begin() + "'");

  std::vector<Monitor> monitors{{"H", p.hamiltonian}};
  for (auto& m : structure_monitors(s)) monitors.push_back(std::move(m));
  for (const auto& m : p.extra_monitors) monitors.push_back(m);

  Trajectory tr;
  for (const auto& m : monitors) tr.monitor_names.push_back(m.name);
  tr.monitors.resize(monitors.size());

  const VectorField f = [&](std::span<const double> x) { return velocity(s, p.hamiltonian, x); };
  auto record = [&](std::span<const double> x) {
    const PhasePoint pt(std::vector<double>(x.begin(), x.end()));
    const Bindings b = s.bind(pt);
    for (std::size_t j = 0; j < monitors.size(); ++j) tr.monitors[j].push_back(eval(monitors[j].expr, b));
    const double det = std::abs(determinant(theta_matrix(s, pt)));
    tr.min_abs_det = std::min(tr.min_abs_det, det);
    if (det < 1e-8) tr.near_degenerate = true;
  };
  auto sol = integrate_field(f, p.x0.vector(), p.dt, p.t_end, p.method, record);
  tr.times = std::move(sol.times);
  tr.states = std::move(sol.states);
  tr.truncated = sol.truncated;
  return tr;
}

struct MonitorDrift {
  std::string name;
  double initial = 0.0;
  double max_abs_drift = 0.0;
  double final_drift = 0.0;
};

inline MonitorDrift drift(const std::vector<double>& series, std::string name = {}) {
  MonitorDrift d{std::move(name), series.empty() ? 0.0 : series.front(), 0.0, 0.0};
  for (double v : series) d.max_abs_drift = std::max(d.max_abs_drift, std::abs(v - d.initial));
  if (!series.empty()) d.final_drift = series.back() - d.initial;
  return d;
}

inline std::vector<MonitorDrift> drifts(const Trajectory& tr) {
  std::vector<MonitorDrift> out;
  for (std::size_t j = 0; j < tr.monitor_names.size(); ++j) out.push_back(drift(tr.monitors[j], tr.monitor_names[j]));
  return out;
}

/// Angular frequency from linearly interpolated crossings of series = level:
/// consecutive crossings are half a period apart.
inline std::optional<double> zero_crossing_frequency(std::span<const double> times, std::span<const double> series,
                                                     double level = 0.0) {
  std::vector<double> crossings;
  for (std::size_t k = 1; k < series.size(); ++k) {
    const double a = series[k - 1] - level, b = series[k] - level;
    if (a == 0.0) {
      if (crossings.empty() || crossings.back() != times[k - 1]) crossings.push_back(times[k - 1]);
    } else if (a * b < 0) {
      crossings.push_back(times[k - 1] + (times[k] - times[k - 1]) * a / (a - b));
    }
  }
  if (crossings.size() < 2) return std::nullopt;
  return std::numbers::pi * static_cast<double>(crossings.size() - 1) / (crossings.back() - crossings.front());
}

// ---------------------------------------------------------------------------
// Pointwise identities along the flow

/// Right-hand sides of the time evolution of {q_m,p_n} - delta_mn,
/// {q_m,q_n} - theta_mn and {p_m,p_n} - F_mn for theta-F kinds.
inline std::vector<NamedResidual> evolution_residuals(const PoissonStructure& s, const Expression& H,
                                                      const PhasePoint& x) {
  if (!s.has_theta_f_form()) throw std::invalid_argument("evolution residuals need a theta-F structure");
  const StructureJet jet = structure_jet(s, x);
  const auto gH = gradient(H, s.bind(x));
  const auto& sp = s.space();
  const int n = s.dof(), d = s.dim();
  // {Theta_ab, x_c} from the jet.
  auto br = [&](int a, int b, int c) {
    double v = 0.0;
    for (int w = 0; w < d; ++w) v += jet.d(a, b, w) * jet.theta(w, c);
    return v;
  };
  auto q = [&](int i) { return sp.q(i); };
  auto p = [&](int i) { return sp.p(i); };
  auto lbl = [](const char* tag, int m, int k) { return std::string(tag) + "_" + std::to_string(m + 1) + std::to_string(k + 1); };
  std::vector<NamedResidual> out;
  for (int m = 0; m < n; ++m)
    for (int k = 0; k < n; ++k) {
      double v = 0.0;
      for (int s_ = 0; s_ < n; ++s_) v += -gH[p(s_)] * br(p(k), p(s_), q(m)) + gH[q(s_)] * br(q(m), q(s_), p(k));
      out.push_back({lbl("ev1", m, k), v});
    }
  for (int m = 0; m < n; ++m)
    for (int k = m + 1; k < n; ++k) {
      double v = 0.0;
      for (int s_ = 0; s_ < n; ++s_) {
        const double cyc = br(q(k), q(s_), q(m)) + br(q(s_), q(m), q(k)) + br(q(m), q(k), q(s_));
        v += -gH[p(s_)] * br(q(m), q(k), p(s_)) - gH[q(s_)] * cyc;
      }
      out.push_back({lbl("ev2", m, k), v});
    }
  for (int m = 0; m < n; ++m)
    for (int k = m + 1; k < n; ++k) {
      double v = 0.0;
      for (int s_ = 0; s_ < n; ++s_) {
        const double cyc = br(p(m), p(k), p(s_)) + br(p(k), p(s_), p(m)) + br(p(s_), p(m), p(k));
        v += -gH[q(s_)] * br(p(m), p(k), q(s_)) + gH[p(s_)] * cyc;
      }
      out.push_back({lbl("ev3", m, k), v});
    }
  return out;
}

/// Velocity combinations that vanish when the structure is degenerate.
inline std::vector<NamedResidual> vanishing_combinations(const PoissonStructure& s, const Expression& H,
                                                         const PhasePoint& x) {
  const Matrix t = theta_matrix(s, x);
  const auto v = t.apply(gradient(H, s.bind(x)));
  std::vector<NamedResidual> out;
  if (s.has_theta_f_form()) {
    const auto& sp = s.space();
    const int n = s.dof();
    for (int m = 0; m < n; ++m) {
      double a = v[sp.q(m)], b = v[sp.p(m)];
      for (int k = 0; k < n; ++k) {
        a += t(sp.q(m), sp.q(k)) * v[sp.p(k)];
        b -= t(sp.p(m), sp.p(k)) * v[sp.q(k)];
      }
      out.push_back({"qdot" + std::to_string(m + 1) + "+theta*pdot", a});
      out.push_back({"pdot" + std::to_string(m + 1) + "-F*qdot", b});
    }
  } else if (s.kind() == StructureKind::GeneralPlanar) {
    const double th = t(0, 1), F = t(2, 3), g11 = t(0, 2), g12 = t(0, 3), g21 = t(1, 2), g22 = t(1, 3);
    out.push_back({"F*qdot1-g12*pdot1+g11*pdot2", F * v[0] - g12 * v[2] + g11 * v[3]});
    out.push_back({"F*qdot2-g22*pdot1+g21*pdot2", F * v[1] - g22 * v[2] + g21 * v[3]});
    out.push_back({"g22*qdot1-g12*qdot2+theta*pdot2", g22 * v[0] - g12 * v[1] + th * v[3]});
    out.push_back({"g21*qdot1-g11*qdot2+theta*pdot1", g21 * v[0] - g11 * v[1] + th * v[2]});
  } else {
    throw std::invalid_argument("vanishing combinations need a theta-F or general-planar structure");
  }
  return out;
}

/// |grad f . x'| against the D-operator expansion of d/dt (n = 2).
inline double time_derivative_identity(const PoissonStructure& s, const Expression& H, const Expression& f,
                                       const PhasePoint& x) {
  if (s.dof() != 2) throw std::invalid_argument("D-operators need n = 2");
  const Matrix t = theta_matrix(s, x);
  const Bindings b = s.bind(x);
  const auto gH = gradient(H, b);
  const auto gf = gradient(f, b);
  const auto v = t.apply(gH);
  double direct = 0.0;
  for (int a = 0; a < 4; ++a) direct += gf[a] * v[a];
  const double expanded = gH[0] * d_operator(t, 1, gf) - gH[1] * d_operator(t, 2, gf) +
                          gH[2] * d_operator(t, 3, gf) + gH[3] * d_operator(t, 4, gf);
  return std::abs(direct - expanded);
}

/// Linear dependence among D1..D4 as vector fields at x.  `literal` tests the
/// relations as typeset; `corrected` swaps D2 and D4, which makes them hold on
/// degenerate structures with sigma = F.  sigma is fitted by least squares.
struct DOperatorDependence {
  double sigma_literal = 0.0;
  double residual_literal_1 = 0.0;
  double residual_literal_2 = 0.0;
  double sigma_corrected = 0.0;
  double residual_corrected_1 = 0.0;
  double residual_corrected_2 = 0.0;
};

inline DOperatorDependence d_operator_dependence(const PoissonStructure& s, const PhasePoint& x) {
  if (s.dof() != 2) throw std::invalid_argument("D-operators need n = 2");
  const Matrix t = theta_matrix(s, x);
  std::array<std::array<double, 4>, 4> D{};
  for (int k = 1; k <= 4; ++k)
    for (int a = 0; a < 4; ++a) {
      std::array<double, 4> e{};
      e[a] = 1.0;
      D[k - 1][a] = d_operator(t, k, e);
    }
  const double th = t(0, 1), g11 = t(0, 2), g12 = t(0, 3), g21 = t(1, 2);
  // Fit sigma in  g11*Da - g12*D3 + sigma*D1 = 0  and report the residual norm.
  auto fit = [&](const std::array<double, 4>& Da, double& sigma) {
    double num = 0.0, den = 0.0;
    for (int a = 0; a < 4; ++a) {
      const double r = g11 * Da[a] - g12 * D[2][a];
      num += r * D[0][a];
      den += D[0][a] * D[0][a];
    }
    sigma = den > 0 ? -num / den : 0.0;
    double res = 0.0;
    for (int a = 0; a < 4; ++a) {
      const double r = g11 * Da[a] - g12 * D[2][a] + sigma * D[0][a];
      res += r * r;
    }
    return std::sqrt(res);
  };
  // -g11*Da = theta*D3 + g21*D1
  auto second = [&](const std::array<double, 4>& Da) {
    double res = 0.0;
    for (int a = 0; a < 4; ++a) {
      const double r = g11 * Da[a] + th * D[2][a] + g21 * D[0][a];
      res += r * r;
    }
    return std::sqrt(res);
  };
  DOperatorDependence out;
  out.residual_literal_1 = fit(D[1], out.sigma_literal);
  out.residual_literal_2 = second(D[3]);
  out.residual_corrected_1 = fit(D[3], out.sigma_corrected);
  out.residual_corrected_2 = second(D[1]);
  return out;
}

}  // namespace poissonred

#endif  // POISSONRED_DYNAMICS_HPP
