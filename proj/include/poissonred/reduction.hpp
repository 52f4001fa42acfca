#ifndef POISSONRED_REDUCTION_HPP
#define POISSONRED_REDUCTION_HPP

// The singular limit det Theta -> 0: constraint surfaces labelled by the
// reduction constants c_m = q_m + theta_mn p_n, constancy of the reduced
// brackets, the reduced Hamiltonian on q alone, and near-singular sweeps.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "poissonred/dynamics.hpp"
#include "poissonred/expr.hpp"
#include "poissonred/linalg.hpp"
#include "poissonred/poisson.hpp"
#include "poissonred/random.hpp"

namespace poissonred {

class ReductionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConvergenceError : public std::runtime_error {
 public:
  ConvergenceError(const std::string& what, std::vector<double> last, int iterations)
      : std::runtime_error(what), last_(std::move(last)), iterations_(iterations) {}
  const std::vector<double>& last_iterate() const noexcept { return last_; }
  int iterations() const noexcept { return iterations_; }

 private:
  std::vector<double> last_;
  int iterations_;
};

// ---------------------------------------------------------------------------
// Fixed-point engine shared by the surface samplers and implicit theta

struct FixedPointResult {
  std::vector<double> x;
  int iterations = 0;
  double residual = std::numeric_limits<double>::infinity();
  bool converged = false;
};

/// Iterates x <- x + w (T(x) - x) with w = 1, halving w once if the residual
/// |T(x) - x| stops decreasing.
inline FixedPointResult fixed_point(const std::function<std::vector<double>(std::span<const double>)>& T,
                                    std::vector<double> x0, double tol = 1e-12, int max_iter = 200) {
  FixedPointResult r{std::move(x0)};
  double w = 1.0;
  double previous = std::numeric_limits<double>::infinity();
  for (int it = 0; it < max_iter; ++it) {
    const auto tx = T(r.x);
    double res = 0.0;
    for (std::size_t i = 0; i < tx.size(); ++i) res = std::max(res, std::abs(tx[i] - r.x[i]));
    r.iterations = it;
    r.residual = res;
    if (!std::isfinite(res)) return r;
    if (res <= tol) {
      r.converged = true;
      return r;
    }
    if (res >= previous && w == 1.0) w = 0.5;
    previous = res;
    for (std::size_t i = 0; i < tx.size(); ++i) r.x[i] += w * (tx[i] - r.x[i]);
  }
  r.iterations = max_iter;
  return r;
}

// ---------------------------------------------------------------------------
// Blocks and constants

/// theta_ij (qq block) or F_ij (pp block) at x as n x n matrices.
inline Matrix theta_block(const PoissonStructure& s, std::span<const double> x) {
  const Matrix t = theta_matrix(s, x);
  const int n = s.dof();
  Matrix m(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) m(i, j) = t(i, j);
  return m;
}

inline Matrix field_block(const PoissonStructure& s, std::span<const double> x) {
  const Matrix t = theta_matrix(s, x);
  const int n = s.dof();
  Matrix m(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) m(i, j) = t(n + i, n + j);
  return m;
}

inline void require_theta_f(const PoissonStructure& s, const char* what) {
  if (!s.has_theta_f_form()) throw ReductionError(std::string(what) + " needs a theta-F structure");
}

/// c_m = q_m + theta_mn(x) p_n.
inline std::vector<double> reduction_constants(const PoissonStructure& s, const PhasePoint& x) {
  require_theta_f(s, "reduction constants");
  const int n = s.dof();
  const Matrix th = theta_block(s, x.values());
  std::vector<double> c(n);
  for (int m = 0; m < n; ++m) {
    c[m] = x[m];
    for (int k = 0; k < n; ++k) c[m] += th(m, k) * x[n + k];
  }
  return c;
}

/// Points whose filter expressions fall inside |value| < min_abs are excluded
/// from clouds and surfaces.
struct DomainFilter {
  Expression expr;
  double min_abs = 0.0;
};

inline bool admissible(const PoissonStructure& s, std::span<const double> x, std::span<const DomainFilter> filters) {
  if (!detail::all_finite(x)) return false;
  try {
    const Matrix t = theta_matrix(s, x);
    if (!detail::all_finite(t.data())) return false;
    const Bindings b = s.space().bind(x);
    for (const auto& f : filters)
      if (!(std::abs(eval(f.expr, b)) >= f.min_abs)) return false;
  } catch (const DomainError&) {
    return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// Constraint surfaces

namespace detail {

inline std::vector<double> join(std::span<const double> q, std::span<const double> p) {
  std::vector<double> x(q.begin(), q.end());
  x.insert(x.end(), p.begin(), p.end());
  return x;
}

}  // namespace detail

/// Solves q = c - theta(q, p) p for q at fixed p, starting from the reference
/// block theta_ref.
inline std::optional<PhasePoint> surface_point_from_p(const PoissonStructure& s, std::span<const double> c,
                                                      const Matrix& theta_ref, std::span<const double> p,
                                                      std::span<const DomainFilter> filters = {}) {
  const int n = s.dof();
  std::vector<double> q0(n);
  const auto tp = theta_ref.apply(p);
  for (int m = 0; m < n; ++m) q0[m] = c[m] - tp[m];
  auto T = [&](std::span<const double> q) {
    const auto x = detail::join(q, p);
    const auto tq = theta_block(s, x).apply(p);
    std::vector<double> out(n);
    for (int m = 0; m < n; ++m) out[m] = c[m] - tq[m];
    return out;
  };
  try {
    const auto r = fixed_point(T, q0);
    if (!r.converged) return std::nullopt;
    auto x = detail::join(r.x, p);
    if (!admissible(s, x, filters)) return std::nullopt;
    return PhasePoint(std::move(x));
  } catch (const DomainError&) {
    return std::nullopt;
  }
}

/// Solves theta(q, p) p = c - q for p at fixed q (needs an invertible theta).
inline std::optional<PhasePoint> surface_point_from_q(const PoissonStructure& s, std::span<const double> c,
                                                      const Matrix& theta_ref, std::span<const double> q,
                                                      std::span<const DomainFilter> filters = {}) {
  const int n = s.dof();
  std::vector<double> rhs(n);
  for (int m = 0; m < n; ++m) rhs[m] = c[m] - q[m];
  try {
    auto p0 = solve(theta_ref, rhs);
    auto T = [&](std::span<const double> p) { return solve(theta_block(s, detail::join(q, p)), rhs); };
    const auto r = fixed_point(T, std::move(p0));
    if (!r.converged) return std::nullopt;
    auto x = detail::join(q, r.x);
    if (!admissible(s, x, filters)) return std::nullopt;
    return PhasePoint(std::move(x));
  } catch (const DomainError&) {
    return std::nullopt;
  } catch (const std::domain_error&) {
    return std::nullopt;
  }
}

struct SurfaceSample {
  std::vector<PhasePoint> points;
  std::size_t attempts = 0;
};

/// Samples the constraint surface through x_ref (fixed c and reference theta):
/// momenta are drawn uniformly within `width` of the reference momenta and
/// the coordinates solved from the surface equations.
inline SurfaceSample sample_surface(const PoissonStructure& s, const PhasePoint& x_ref, std::size_t count,
                                    double width, std::span<const DomainFilter> filters, SplitMix64& rng) {
  require_theta_f(s, "surface sampling");
  const int n = s.dof();
  const auto c = reduction_constants(s, x_ref);
  const Matrix th = theta_block(s, x_ref.values());
  SurfaceSample out;
  const std::size_t max_attempts = 50 * count + 100;
  while (out.points.size() < count && out.attempts < max_attempts) {
    ++out.attempts;
    std::vector<double> p(n);
    for (int k = 0; k < n; ++k) p[k] = x_ref[n + k] + rng.uniform(-width, width);
    if (auto pt = surface_point_from_p(s, c, th, p, filters)) out.points.push_back(std::move(*pt));
  }
  return out;
}

/// Moves within the symplectic leaf through x_ref by chaining short flows of
/// random quadratic Hamiltonians; every flow end point is one sample.
inline SurfaceSample leaf_walk(const PoissonStructure& s, const PhasePoint& x_ref, std::size_t count,
                               std::span<const DomainFilter> filters, SplitMix64& rng, double max_tau = 0.5) {
  const auto& sp = s.space();
  SurfaceSample out;
  std::vector<double> x = x_ref.vector();
  const std::size_t max_attempts = 20 * count + 100;
  while (out.points.size() < count && out.attempts < max_attempts) {
    ++out.attempts;
    Expression H = Expression::constant(0.0);
    for (int a = 0; a < s.dim(); ++a) {
      const auto v = Expression::variable(sp.name(a));
      H = H + Expression::constant(rng.uniform(-1, 1)) * v +
          Expression::constant(0.5 * rng.uniform(-1, 1)) * v * v;
    }
    const double tau = max_tau * (0.1 + 0.9 * rng.uniform());
    const VectorField f = [&](std::span<const double> y) { return velocity(s, H, y); };
    try {
      std::vector<double> y = x;
      bool ok = true;
      constexpr int kSteps = 50;
      for (int k = 0; k < kSteps && ok; ++k) {
        y = step(Method::RK4, f, y, tau / kSteps);
        ok = admissible(s, y, filters);
      }
      if (!ok) continue;
      x = y;
      out.points.emplace_back(x);
    } catch (const DomainError&) {
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reduction report

struct ReductionReport {
  std::size_t cloud_size = 0;
  std::size_t admissible = 0;
  bool reduced = false;
  double condition_residual = 0.0;          // max over the cloud of the deciding condition
  std::optional<double> theta_f_residual;   // max |theta_12 F_12 - 1|, n = 2 theta-F kinds
  std::optional<double> matrix_condition;   // max_mn |theta_mk F_kn + delta_mn|
  std::optional<double> planar_condition;   // max |theta F - g11 g22 + g12 g21|
  std::vector<double> constants;            // c_m at the first admissible point
  Matrix theta_red;                         // qq block at the first admissible point
  double spread = 0.0;                      // max - min of theta_red entries over admissible points
  double bracket_spread = 0.0;              // the same over every bracket entry
  std::optional<double> dual_dq_dp;         // max |dq_m/dp_s + theta_ms| on the surface
  std::optional<double> dual_dp_dq;         // max |dp_k/dq_n - F_kn| on the surface

  std::string_view outcome() const { return reduced ? "reduced" : "not reduced"; }
};

namespace detail {

// Central differences of the surface maps through x.
inline void dual_relations(const PoissonStructure& s, const PhasePoint& x, ReductionReport& r) {
  const int n = s.dof();
  const auto c = reduction_constants(s, x);
  const Matrix th = theta_block(s, x.values());
  const Matrix F = field_block(s, x.values());
  const double h = 1e-6;
  const auto q = std::vector<double>(x.values().begin(), x.values().begin() + n);
  const auto p = std::vector<double>(x.values().begin() + n, x.values().end());
  double dq = 0.0;
  bool have_dq = true;
  for (int k = 0; k < n && have_dq; ++k) {
    auto pp = p, pm = p;
    pp[k] += h;
    pm[k] -= h;
    const auto xp = surface_point_from_p(s, c, th, pp);
    const auto xm = surface_point_from_p(s, c, th, pm);
    if (!xp || !xm) {
      have_dq = false;
      break;
    }
    for (int m = 0; m < n; ++m) dq = std::max(dq, std::abs(((*xp)[m] - (*xm)[m]) / (2 * h) + th(m, k)));
  }
  if (have_dq) r.dual_dq_dp = std::max(r.dual_dq_dp.value_or(0.0), dq);
  if (determinant(th) == 0.0) return;
  double dp = 0.0;
  for (int m = 0; m < n; ++m) {
    auto qp = q, qm = q;
    qp[m] += h;
    qm[m] -= h;
    const auto xp = surface_point_from_q(s, c, th, qp);
    const auto xm = surface_point_from_q(s, c, th, qm);
    if (!xp || !xm) return;
    for (int k = 0; k < n; ++k) dp = std::max(dp, std::abs(((*xp)[n + k] - (*xm)[n + k]) / (2 * h) - F(k, m)));
  }
  r.dual_dp_dq = std::max(r.dual_dp_dq.value_or(0.0), dp);
}

inline void update_range(std::vector<std::pair<double, double>>& range, std::span<const double> v) {
  if (range.empty()) range.assign(v.size(), {std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()});
  for (std::size_t i = 0; i < v.size(); ++i) {
    range[i].first = std::min(range[i].first, v[i]);
    range[i].second = std::max(range[i].second, v[i]);
  }
}

inline double range_width(const std::vector<std::pair<double, double>>& range) {
  double w = 0.0;
  for (const auto& [lo, hi] : range) w = std::max(w, hi - lo);
  return w;
}

}  // namespace detail

/// Evaluates the degeneracy condition over a cloud and, on the admissible
/// subset (condition <= tol), the spread of the reduced brackets.
inline ReductionReport check_reduction(const PoissonStructure& s, std::span<const PhasePoint> cloud, double tol = 1e-9,
                                       bool with_dual_relations = true) {
  if (cloud.empty()) throw std::invalid_argument("empty cloud");
  ReductionReport r;
  r.cloud_size = cloud.size();
  std::vector<std::pair<double, double>> theta_range, all_range;
  for (const auto& x : cloud) {
    const auto d = degeneracy(s, x);
    double cond;
    if (s.has_theta_f_form()) {
      cond = *d.matrix_condition;
      r.matrix_condition = std::max(r.matrix_condition.value_or(0.0), cond);
      if (s.dof() == 2) {
        const Matrix t = theta_matrix(s, x);
        r.theta_f_residual = std::max(r.theta_f_residual.value_or(0.0), std::abs(t(0, 1) * t(2, 3) - 1.0));
      }
    } else if (d.planar_condition) {
      cond = std::abs(*d.planar_condition);
      r.planar_condition = std::max(r.planar_condition.value_or(0.0), cond);
    } else {
      cond = std::abs(d.det);
    }
    r.condition_residual = std::max(r.condition_residual, cond);
    if (cond > tol) continue;
    ++r.admissible;
    const Matrix th = theta_block(s, x.values());
    if (r.admissible == 1) {
      r.theta_red = th;
      if (s.has_theta_f_form()) r.constants = reduction_constants(s, x);
    }
    detail::update_range(theta_range, th.data());
    detail::update_range(all_range, theta_matrix(s, x).data());
    if (with_dual_relations && s.has_theta_f_form()) detail::dual_relations(s, x, r);
  }
  r.reduced = r.admissible > 0;
  if (r.reduced) {
    r.spread = detail::range_width(theta_range);
    r.bracket_spread = detail::range_width(all_range);
  }
  return r;
}

// ---------------------------------------------------------------------------
// Counting argument for general planar (and any) structures

struct CountingReport {
  int nonconstant = 0;
  int bound = 0;                              // n^2 - n + 1
  std::vector<std::string> nonconstant_names;
  bool constancy_claimed = false;
  std::string status;                         // "verified", "violated" or "constancy not implied"
  double bracket_spread = 0.0;                // over the leaf sample
  std::optional<double> ratio_residual;       // max |theta F / (g11 g22) - 1| when g12 = g21 = 0
  std::size_t samples = 0;
};

inline CountingReport counting_analysis(const PoissonStructure& s, std::span<const PhasePoint> leaf, double tol = 1e-9) {
  CountingReport r;
  const int n = s.dof();
  r.bound = n * n - n + 1;
  const bool planar = s.kind() == StructureKind::GeneralPlanar;
  static const char* planar_names[6] = {"theta", "F", "g11", "g12", "g21", "g22"};
  const std::pair<int, int> planar_slots[6] = {{0, 1}, {2, 3}, {0, 2}, {0, 3}, {1, 2}, {1, 3}};
  for (int a = 0; a < s.dim(); ++a)
    for (int b = a + 1; b < s.dim(); ++b) {
      if (s.entry_is_constant(a, b)) continue;
      ++r.nonconstant;
      std::string name = "Theta" + std::to_string(a + 1) + std::to_string(b + 1);
      if (planar)
        for (int k = 0; k < 6; ++k)
          if (planar_slots[k] == std::pair{a, b}) name = planar_names[k];
      r.nonconstant_names.push_back(name);
    }
  r.constancy_claimed = r.nonconstant <= r.bound;
  r.samples = leaf.size();
  std::vector<std::pair<double, double>> range;
  for (const auto& x : leaf) detail::update_range(range, theta_matrix(s, x).data());
  if (!range.empty()) r.bracket_spread = detail::range_width(range);
  auto structurally_zero = [&](int a, int b) {
    return s.entry_is_constant(a, b) && eval(s.entry(a, b), Bindings{}) == 0.0;
  };
  if (planar && structurally_zero(0, 3) && structurally_zero(1, 2)) {
    double worst = 0.0;
    for (const auto& x : leaf) {
      const Matrix t = theta_matrix(s, x);
      worst = std::max(worst, std::abs(t(0, 1) * t(2, 3) / (t(0, 2) * t(1, 3)) - 1.0));
    }
    r.ratio_residual = worst;
  }
  if (r.constancy_claimed) r.status = r.bracket_spread <= tol ? "verified" : "violated";
  else r.status = "constancy not implied";
  return r;
}

// ---------------------------------------------------------------------------
// Implicit theta = phi(q1 + theta p2, q2 - theta p1)

struct ImplicitTheta {
  double theta = 0.0;
  int iterations = 0;
  double residual = 0.0;
};

/// phi is an expression in the variables c1 and c2.
inline ImplicitTheta implicit_theta(const Expression& phi, const PhasePoint& x, double guess = 0.0, int max_iter = 200,
                                    double tol = 1e-12) {
  if (x.size() != 4) throw std::invalid_argument("implicit theta needs n = 2");
  auto T = [&](std::span<const double> th) {
    Bindings b;
    b.set_variable("c1", x[0] + th[0] * x[3]);
    b.set_variable("c2", x[1] - th[0] * x[2]);
    return std::vector<double>{eval(phi, b)};
  };
  const auto r = fixed_point(T, {guess}, tol, max_iter);
  if (!r.converged)
    throw ConvergenceError("implicit theta did not converge in " + std::to_string(max_iter) + " iterations", r.x,
                           r.iterations);
  return {r.x[0], r.iterations, r.residual};
}

/// The halved Jacobi system evaluated on the implicit solution, with the
/// gradient of theta taken by central differences.
inline std::array<double, 2> implicit_theta_jacobi(const Expression& phi, const PhasePoint& x, double guess = 0.0,
                                                   double h = 1e-5) {
  // Inner solves run far below the default tolerance so that iteration error
  // does not swamp the difference quotients.
  constexpr double tight = 1e-15;
  const double th = implicit_theta(phi, x, guess, 2000, tight).theta;
  std::array<double, 4> g{};
  for (int a = 0; a < 4; ++a) {
    auto xp = x.vector(), xm = x.vector();
    xp[a] += h;
    xm[a] -= h;
    g[a] = (implicit_theta(phi, PhasePoint(xp), th, 2000, tight).theta -
            implicit_theta(phi, PhasePoint(xm), th, 2000, tight).theta) /
           (2 * h);
  }
  return {th * g[0] - g[3], th * g[1] + g[2]};
}

// ---------------------------------------------------------------------------
// Total variation of the reduced brackets

struct TotalVariationReport {
  std::vector<NamedResidual> analytic;       // partial derivatives chained with dp/dq = F, dq/dp = -theta
  std::vector<NamedResidual> along_surface;  // central differences along the surface maps

  double max() const { return std::max(max_abs(analytic), max_abs(along_surface)); }
};

inline TotalVariationReport total_variation_residual(const PoissonStructure& s, const PhasePoint& x,
                                                     double h = 1e-5) {
  require_theta_f(s, "total variation");
  const int n = s.dof();
  const auto& sp = s.space();
  const StructureJet jet = structure_jet(s, x);
  TotalVariationReport r;
  auto idx = [](int i, int j) { return std::to_string(i + 1) + std::to_string(j + 1); };
  for (int block = 0; block < 2; ++block) {
    const char* tag = block == 0 ? "theta" : "F";
    auto at = [&](int i) { return block == 0 ? sp.q(i) : sp.p(i); };
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j)
        for (int l = 0; l < n; ++l) {
          double dq = jet.d(at(i), at(j), sp.q(l));
          double dp = jet.d(at(i), at(j), sp.p(l));
          for (int k = 0; k < n; ++k) {
            dq += jet.d(at(i), at(j), sp.p(k)) * jet.theta(sp.p(k), sp.p(l));
            dp -= jet.d(at(i), at(j), sp.q(k)) * jet.theta(sp.q(k), sp.q(l));
          }
          r.analytic.push_back({"d" + std::string(tag) + idx(i, j) + "/dq" + std::to_string(l + 1), dq});
          r.analytic.push_back({"d" + std::string(tag) + idx(i, j) + "/dp" + std::to_string(l + 1), dp});
        }
  }
  const auto c = reduction_constants(s, x);
  const Matrix th = theta_block(s, x.values());
  const bool invertible = determinant(th) != 0.0;
  const auto q = std::vector<double>(x.values().begin(), x.values().begin() + n);
  const auto p = std::vector<double>(x.values().begin() + n, x.values().end());
  for (int l = 0; l < n; ++l) {
    auto fd = [&](bool wrt_q) -> std::optional<Matrix> {
      auto plus = wrt_q ? q : p, minus = plus;
      plus[l] += h;
      minus[l] -= h;
      const auto xp = wrt_q ? surface_point_from_q(s, c, th, plus) : surface_point_from_p(s, c, th, plus);
      const auto xm = wrt_q ? surface_point_from_q(s, c, th, minus) : surface_point_from_p(s, c, th, minus);
      if (!xp || !xm) return std::nullopt;
      const Matrix tp = theta_matrix(s, *xp), tm = theta_matrix(s, *xm);
      Matrix d(tp.rows(), tp.cols());
      for (std::size_t a = 0; a < tp.rows(); ++a)
        for (std::size_t b = 0; b < tp.cols(); ++b) d(a, b) = (tp(a, b) - tm(a, b)) / (2 * h);
      return d;
    };
    for (bool wrt_q : {true, false}) {
      if (wrt_q && !invertible) continue;
      const auto d = fd(wrt_q);
      if (!d) continue;
      const std::string var = (wrt_q ? "/dq" : "/dp") + std::to_string(l + 1);
      for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) {
          r.along_surface.push_back({"dtheta" + idx(i, j) + var, (*d)(sp.q(i), sp.q(j))});
          r.along_surface.push_back({"dF" + idx(i, j) + var, (*d)(sp.p(i), sp.p(j))});
        }
    }
  }
  return r;
}

// ---------------------------------------------------------------------------
// Reduced system on q alone

struct ReducedSystem {
  int n = 0;
  Matrix theta_red;        // constant n x n bracket {q_i, q_j}
  std::vector<double> c;   // surface labels
  Expression h;            // Hamiltonian with p eliminated

  Bindings bind(std::span<const double> q) const {
    Bindings b;
    for (int i = 0; i < n; ++i) b.set_variable("q" + std::to_string(i + 1), q[i]);
    return b;
  }
  double energy(std::span<const double> q) const { return eval(h, bind(q)); }

  std::vector<double> velocity(std::span<const double> q) const { return theta_red.apply(gradient(h, bind(q))); }
};

/// Eliminates p through q_m + theta_red_mn p_n = c_m, i.e. p = theta_red^-1 (c - q).
inline ReducedSystem build_reduced(const PoissonStructure& s, const Expression& H, std::span<const double> c,
                                   const Matrix& theta_red) {
  const int n = s.dof();
  if (static_cast<int>(c.size()) != n || static_cast<int>(theta_red.rows()) != n)
    throw ReductionError("reduced system: dimension mismatch");
  if ((theta_red + theta_red.transpose()).max_abs() > 1e-12)
    throw ReductionError("reduced bracket matrix is not antisymmetric");
  Matrix inv;
  try {
    inv = inverse(theta_red);
  } catch (const std::domain_error&) {
    throw ReductionError("reduced bracket matrix is singular");
  }
  const auto& sp = s.space();
  std::map<std::string, Expression, std::less<>> repl;
  for (int k = 0; k < n; ++k) {
    Expression pk = Expression::constant(0.0);
    for (int m = 0; m < n; ++m) {
      if (inv(k, m) == 0.0) continue;
      pk = pk + Expression::constant(inv(k, m)) *
                    (Expression::constant(c[m]) - Expression::variable(sp.name(sp.q(m))));
    }
    repl.emplace(sp.name(sp.p(k)), fold_constants(pk));
  }
  ReducedSystem rs{n, theta_red, std::vector<double>(c.begin(), c.end()), fold_constants(substitute(H, repl))};
  for (const auto& v : rs.h.variables())
    if (v.front() != 'q') throw ReductionError("reduced Hamiltonian still depends on " + v);
  return rs;
}

inline ReducedSystem build_reduced(const PoissonStructure& s, const Expression& H, const ReductionReport& r) {
  if (!r.reduced) throw ReductionError("reduction condition unmet");
  return build_reduced(s, H, r.constants, r.theta_red);
}

struct SpectrumReport {
  std::array<double, 2> center{0.0, 0.0};
  double nbar_ref = 0.0;
  double omega_red = 0.0;
  std::vector<double> E_definitional;  // h_theta(n + 1/2)
  std::vector<double> E_scaled;         // h_theta(|theta| (n + 1/2))
  double spacing_definitional = 0.0;
  double spacing_scaled = 0.0;
  double affine_residual_definitional = 0.0;
  double affine_residual_scaled = 0.0;
};

namespace detail {

inline bool rotationally_invariant_about(const ReducedSystem& rs, std::array<double, 2> z, double r_ref) {
  const double radii[3] = {0.5 * r_ref, r_ref, 1.5 * r_ref};
  for (double r : radii) {
    const double h0 = rs.energy(std::array<double, 2>{z[0] + r, z[1]});
    for (int k = 1; k < 8; ++k) {
      const double phi = 2 * std::numbers::pi * k / 8.0;
      const double h = rs.energy(std::array<double, 2>{z[0] + r * std::cos(phi), z[1] + r * std::sin(phi)});
      if (std::abs(h - h0) > 1e-9 * (1 + std::abs(h0))) return false;
    }
  }
  return true;
}

inline std::pair<double, double> affine_fit(const std::vector<double>& E, double& residual) {
  std::vector<double> n(E.size());
  for (std::size_t k = 0; k < E.size(); ++k) n[k] = static_cast<double>(k);
  if (E.size() < 2) {
    residual = 0.0;
    return {0.0, E.empty() ? 0.0 : E[0]};
  }
  const auto fit = linear_fit(n, E);
  residual = 0.0;
  for (std::size_t k = 0; k < E.size(); ++k) residual = std::max(residual, std::abs(E[k] - fit.intercept - fit.slope * n[k]));
  return {fit.slope, fit.intercept};
}

}  // namespace detail

/// Radial profile h_theta(nbar) with nbar = r^2 / (2|theta|) for rotationally
/// invariant planar reduced systems, the classical frequency |dh_theta/dnbar|
/// on the orbit through q_ref, and E_n under both normalizations.
inline SpectrumReport reduced_spectrum_and_frequency(const ReducedSystem& rs, std::span<const double> q_ref, int n_max) {
  if (rs.n != 2) throw ReductionError("spectrum needs a planar reduced system");
  const double theta = rs.theta_red(0, 1);
  const double at = std::abs(theta);
  if (at == 0.0) throw ReductionError("spectrum needs theta_red != 0");
  SpectrumReport out;
  std::optional<std::array<double, 2>> center;
  for (const auto& z : {std::array<double, 2>{0.0, 0.0}, std::array<double, 2>{rs.c[0], rs.c[1]}}) {
    const double r_ref = std::hypot(q_ref[0] - z[0], q_ref[1] - z[1]);
    if (detail::rotationally_invariant_about(rs, z, r_ref > 0 ? r_ref : 1.0)) {
      center = z;
      break;
    }
  }
  if (!center) throw ReductionError("reduced Hamiltonian is not rotationally invariant");
  out.center = *center;
  const auto z = *center;
  auto profile = [&](double nbar) {
    const double r = std::sqrt(2 * at * std::max(nbar, 0.0));
    return rs.energy(std::array<double, 2>{z[0] + r, z[1]});
  };
  const double r_ref = std::hypot(q_ref[0] - z[0], q_ref[1] - z[1]);
  out.nbar_ref = r_ref * r_ref / (2 * at);
  const double r_eval = r_ref > 1e-8 ? r_ref : 1e-6;
  const double dh_dr = gradient(rs.h, rs.bind(std::array<double, 2>{z[0] + r_eval, z[1]}))[0];
  out.omega_red = std::abs(at * dh_dr / r_eval);
  for (int k = 0; k <= n_max; ++k) {
    out.E_definitional.push_back(profile(k + 0.5));
    out.E_scaled.push_back(profile(at * (k + 0.5)));
  }
  out.spacing_definitional = detail::affine_fit(out.E_definitional, out.affine_residual_definitional).first;
  out.spacing_scaled = detail::affine_fit(out.E_scaled, out.affine_residual_scaled).first;
  return out;
}

// ---------------------------------------------------------------------------
// Near-singular family F = (1 - eps) / theta

struct SweepRow {
  double epsilon = 0.0;
  double c_drift = 0.0;    // max over t and m of |c_m(t) - c_m(0)|
  std::optional<double> frequency;  // zero crossings of q1
  bool truncated = false;
};

struct SweepReport {
  std::vector<SweepRow> rows;
  double slope = 0.0;      // log10 c_drift against log10 eps
  double intercept = 0.0;
};

inline SweepReport near_singular_sweep(double theta, const Expression& H, const PhasePoint& x0,
                                       std::span<const double> epsilons, double dt, double t_end,
                                       Method method = Method::RK4) {
  SweepReport out;
  std::vector<double> lx, ly;
  for (double eps : epsilons) {
    FlowProblem p{PoissonStructure::constant_theta_f(theta, (1.0 - eps) / theta), H, x0, dt, t_end, method};
    const auto tr = integrate(p);
    SweepRow row;
    row.epsilon = eps;
    row.truncated = tr.truncated;
    row.c_drift = std::max(drift(tr.series("c1")).max_abs_drift, drift(tr.series("c2")).max_abs_drift);
    std::vector<double> q1(tr.states.size());
    for (std::size_t k = 0; k < q1.size(); ++k) q1[k] = tr.states[k][0];
    row.frequency = zero_crossing_frequency(tr.times, q1);
    if (row.c_drift > 0 && eps > 0) {
      lx.push_back(std::log10(eps));
      ly.push_back(std::log10(row.c_drift));
    }
    out.rows.push_back(row);
  }
  if (lx.size() >= 2) {
    const auto fit = linear_fit(lx, ly);
    out.slope = fit.slope;
    out.intercept = fit.intercept;
  }
  return out;
}

}  // namespace poissonred

#endif  // POISSONRED_REDUCTION_HPP
