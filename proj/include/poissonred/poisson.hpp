#ifndef POISSONRED_POISSON_HPP
#define POISSONRED_POISSON_HPP

// Poisson structures Theta_ab(x) = {x_a, x_b} on a 2n-dimensional phase space
// with the flat ordering x = (q_1..q_n, p_1..p_n).  Only the strict upper
// triangle is stored, so antisymmetry holds by construction.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "poissonred/expr.hpp"
#include "poissonred/linalg.hpp"
#include "poissonred/random.hpp"

namespace poissonred {

class StructureError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class PhaseSpace {
 public:
  explicit PhaseSpace(int dof) : dof_(dof) {
    if (dof < 1) throw StructureError("phase space needs at least one degree of freedom");
    names_.reserve(2 * dof);
    for (int i = 1; i <= dof; ++i) names_.push_back("q" + std::to_string(i));
    for (int i = 1; i <= dof; ++i) names_.push_back("p" + std::to_string(i));
  }

  int dof() const noexcept { return dof_; }
  int dim() const noexcept { return 2 * dof_; }

  /// Flat index of q_{i+1} and p_{i+1} (0-based i).
  int q(int i) const noexcept { return i; }
  int p(int i) const noexcept { return dof_ + i; }

  const std::string& name(int a) const { return names_.at(a); }
  std::span<const std::string> names() const noexcept { return names_; }

  std::optional<int> index_of(std::string_view name) const {
    for (int a = 0; a < dim(); ++a)
      if (names_[a] == name) return a;
    return std::nullopt;
  }

  Bindings bind(std::span<const double> x) const {
    if (static_cast<int>(x.size()) != dim())
      throw StructureError("phase point has " + std::to_string(x.size()) + " entries, expected " +
                           std::to_string(dim()));
    Bindings b;
    for (int a = 0; a < dim(); ++a) b.set_variable(names_[a], x[a]);
    return b;
  }

 private:
  int dof_;
  std::vector<std::string> names_;
};

/// A point of phase space; entries must be finite.
class PhasePoint {
 public:
  PhasePoint() = default;
  explicit PhasePoint(std::vector<double> x) : x_(std::move(x)) {
    for (double v : x_)
      if (!std::isfinite(v)) throw std::invalid_argument("phase point with non-finite entry");
  }
  PhasePoint(std::initializer_list<double> x) : PhasePoint(std::vector<double>(x)) {}

  std::size_t size() const noexcept { return x_.size(); }
  double operator[](std::size_t a) const { return x_[a]; }
  std::span<const double> values() const noexcept { return x_; }
  const std::vector<double>& vector() const noexcept { return x_; }

 private:
  std::vector<double> x_;
};

enum class StructureKind { Canonical, ConstantThetaF, ThetaFField, GeneralPlanar, Custom };

inline std::string_view to_string(StructureKind k) {
  switch (k) {
    case StructureKind::Canonical: return "canonical";
    case StructureKind::ConstantThetaF: return "constant-theta-F";
    case StructureKind::ThetaFField: return "theta-F-field";
    case StructureKind::GeneralPlanar: return "general-planar";
    case StructureKind::Custom: return "custom";
  }
  return "?";
}

/// The six functions of the most general planar bracket:
/// {q1,q2}=theta, {p1,p2}=F, {q_i,p_j}=g_ij.
struct PlanarFunctions {
  Expression theta, F, g11, g12, g21, g22;
};

/// One supplied matrix element (0-based indices) for structure construction.
struct MatrixEntry {
  int row = 0;
  int col = 0;
  Expression value;
};

/// Input for build_structure().  Which fields are read depends on `kind`.
struct StructureSpec {
  StructureKind kind = StructureKind::Canonical;
  int dof = 1;
  double theta = 0.0;                     // constant-theta-F
  double F = 0.0;                         // constant-theta-F
  std::vector<MatrixEntry> theta_entries; // theta-F-field, n x n indices
  std::vector<MatrixEntry> F_entries;     // theta-F-field, n x n indices
  std::optional<PlanarFunctions> planar;  // general-planar
  std::vector<MatrixEntry> entries;       // custom, 2n x 2n indices
};

class PoissonStructure {
 public:
  StructureKind kind() const noexcept { return kind_; }
  const PhaseSpace& space() const noexcept { return space_; }
  int dof() const noexcept { return space_.dof(); }
  int dim() const noexcept { return space_.dim(); }

  /// Theta_ab as an expression; a > b yields the negated upper entry.
  Expression entry(int a, int b) const {
    if (a == b) return Expression::constant(0.0);
    if (a < b) return upper_[slot(a, b)];
    return fold_constants(-upper_[slot(b, a)]);
  }

  bool entry_is_constant(int a, int b) const {
    if (a == b) return true;
    return constant_[a < b ? slot(a, b) : slot(b, a)];
  }

  /// True for kinds whose mixed block is {q_i,p_j} = delta_ij.
  bool has_theta_f_form() const noexcept {
    return kind_ == StructureKind::Canonical || kind_ == StructureKind::ConstantThetaF ||
           kind_ == StructureKind::ThetaFField;
  }

  /// theta_ij = {q_i, q_j} and F_ij = {p_i, p_j} (0-based i, j).
  Expression theta(int i, int j) const { return entry(space_.q(i), space_.q(j)); }
  Expression field_strength(int i, int j) const { return entry(space_.p(i), space_.p(j)); }

  /// The six planar functions read off the entries; requires n = 2.
  PlanarFunctions planar_functions() const {
    if (dof() != 2) throw StructureError("planar functions need n = 2");
    return {entry(0, 1), entry(2, 3), entry(0, 2), entry(0, 3), entry(1, 2), entry(1, 3)};
  }

  Bindings bind(const PhasePoint& x) const { return space_.bind(x.values()); }

  /// Builders.  Index maps use 0-based (i, j) with i < j.
  static PoissonStructure canonical(int dof) {
    PoissonStructure s(StructureKind::Canonical, dof);
    for (int i = 0; i < dof; ++i) s.set(s.space_.q(i), s.space_.p(i), Expression::constant(1.0));
    s.finish();
    return s;
  }

  static PoissonStructure constant_theta_f(double theta, double F) {
    PoissonStructure s(StructureKind::ConstantThetaF, 2);
    s.set(0, 1, Expression::constant(theta));
    s.set(0, 2, Expression::constant(1.0));
    s.set(1, 3, Expression::constant(1.0));
    s.set(2, 3, Expression::constant(F));
    s.finish();
    return s;
  }

  static PoissonStructure theta_f_field(int dof, const std::map<std::pair<int, int>, Expression>& theta,
                                        const std::map<std::pair<int, int>, Expression>& F) {
    PoissonStructure s(StructureKind::ThetaFField, dof);
    for (int i = 0; i < dof; ++i) s.set(s.space_.q(i), s.space_.p(i), Expression::constant(1.0));
    for (const auto& [ij, e] : theta) {
      check_upper(ij, dof);
      s.set(s.space_.q(ij.first), s.space_.q(ij.second), e);
    }
    for (const auto& [ij, e] : F) {
      check_upper(ij, dof);
      s.set(s.space_.p(ij.first), s.space_.p(ij.second), e);
    }
    s.finish();
    return s;
  }

  static PoissonStructure general_planar(const PlanarFunctions& f) {
    PoissonStructure s(StructureKind::GeneralPlanar, 2);
    s.set(0, 1, f.theta);
    s.set(2, 3, f.F);
    s.set(0, 2, f.g11);
    s.set(0, 3, f.g12);
    s.set(1, 2, f.g21);
    s.set(1, 3, f.g22);
    s.finish();
    return s;
  }

  static PoissonStructure custom(int dof, const std::map<std::pair<int, int>, Expression>& upper) {
    PoissonStructure s(StructureKind::Custom, dof);
    for (const auto& [ab, e] : upper) {
      check_upper(ab, 2 * dof);
      s.set(ab.first, ab.second, e);
    }
    s.finish();
    return s;
  }

 private:
  PoissonStructure(StructureKind kind, int dof)
      : kind_(kind), space_(dof),
        upper_(static_cast<std::size_t>(dof) * (2 * dof - 1), Expression::constant(0.0)),
        constant_(upper_.size(), true) {}

  std::size_t slot(int a, int b) const {
    const int d = dim();
    return static_cast<std::size_t>(a * d - a * (a + 1) / 2 + (b - a - 1));
  }

  void set(int a, int b, const Expression& e) { upper_[slot(a, b)] = fold_constants(e); }

  void finish() {
    for (std::size_t k = 0; k < upper_.size(); ++k) {
      constant_[k] = upper_[k].is_constant();
      for (const auto& v : upper_[k].variables())
        if (!space_.index_of(v))
          throw StructureError("bracket entry references '" + v + "' outside the phase space");
    }
  }

  static void check_upper(const std::pair<int, int>& ij, int size) {
    if (ij.first < 0 || ij.second >= size || ij.first >= ij.second)
      throw StructureError("entry (" + std::to_string(ij.first + 1) + "," +
                           std::to_string(ij.second + 1) + ") outside the strict upper triangle");
  }

  StructureKind kind_;
  PhaseSpace space_;
  std::vector<Expression> upper_;
  std::vector<bool> constant_;
};

namespace detail {

// Deterministic probe points for structural checks on user input.
inline std::vector<PhasePoint> probe_points(int dim, int count = 8) {
  SplitMix64 rng(0x9d2c5680u);
  std::vector<PhasePoint> out;
  for (int k = 0; k < count; ++k) {
    std::vector<double> x(dim);
    for (auto& v : x) v = rng.uniform(-1.7, 1.9);
    out.emplace_back(std::move(x));
  }
  return out;
}

// Folds a list of possibly both-sided entries into an upper-triangle map,
// rejecting diagonal terms and pairs that are not negatives of each other.
inline std::map<std::pair<int, int>, Expression> antisymmetric_upper(const std::vector<MatrixEntry>& in,
                                                                     int size, const PhaseSpace& space,
                                                                     std::string_view what) {
  std::map<std::pair<int, int>, Expression> given;
  for (const auto& e : in) {
    if (e.row < 0 || e.col < 0 || e.row >= size || e.col >= size)
      throw StructureError(std::string(what) + " entry (" + std::to_string(e.row + 1) + "," +
                           std::to_string(e.col + 1) + ") outside a " + std::to_string(size) + "x" +
                           std::to_string(size) + " matrix");
    if (!given.emplace(std::pair{e.row, e.col}, e.value).second)
      throw StructureError(std::string(what) + " entry given twice");
  }
  const auto probes = probe_points(space.dim());
  auto agrees = [&](const Expression& lhs, const Expression& rhs, double sign) {
    for (const auto& x : probes) {
      const Bindings b = space.bind(x.values());
      try {
        const double l = eval(lhs, b);
        const double r = eval(rhs, b);
        if (std::abs(l - sign * r) > 1e-12 * (1.0 + std::abs(l))) return false;
      } catch (const DomainError&) {
      }
    }
    return true;
  };
  const Expression zero = Expression::constant(0.0);
  std::map<std::pair<int, int>, Expression> upper;
  for (const auto& [ij, e] : given) {
    const auto [i, j] = ij;
    if (i == j) {
      if (!agrees(e, zero, 1.0))
        throw StructureError(std::string(what) + " is not antisymmetric: nonzero diagonal entry (" +
                             std::to_string(i + 1) + "," + std::to_string(i + 1) + ")");
      continue;
    }
    if (i < j) {
      auto mirror = given.find({j, i});
      if (mirror != given.end() && !agrees(e, mirror->second, -1.0))
        throw StructureError(std::string(what) + " is not antisymmetric at (" + std::to_string(i + 1) +
                             "," + std::to_string(j + 1) + ")");
      upper[{i, j}] = e;
    } else if (!given.count({j, i})) {
      upper[{j, i}] = fold_constants(-e);
    }
  }
  return upper;
}

}  // namespace detail

/// Validates a structure description and builds it.
inline PoissonStructure build_structure(const StructureSpec& spec) {
  switch (spec.kind) {
    case StructureKind::Canonical:
      return PoissonStructure::canonical(spec.dof);
    case StructureKind::ConstantThetaF:
      if (spec.dof != 2) throw StructureError("constant-theta-F structure needs n = 2");
      return PoissonStructure::constant_theta_f(spec.theta, spec.F);
    case StructureKind::ThetaFField: {
      const PhaseSpace space(spec.dof);
      return PoissonStructure::theta_f_field(
          spec.dof, detail::antisymmetric_upper(spec.theta_entries, spec.dof, space, "theta"),
          detail::antisymmetric_upper(spec.F_entries, spec.dof, space, "F"));
    }
    case StructureKind::GeneralPlanar:
      if (spec.dof != 2) throw StructureError("general-planar structure needs n = 2");
      if (!spec.planar) throw StructureError("general-planar structure needs its six functions");
      return PoissonStructure::general_planar(*spec.planar);
    case StructureKind::Custom: {
      const PhaseSpace space(spec.dof);
      return PoissonStructure::custom(spec.dof,
                                      detail::antisymmetric_upper(spec.entries, space.dim(), space, "Theta"));
    }
  }
  throw StructureError("unknown structure kind");
}

// ---------------------------------------------------------------------------
// Pointwise evaluation

inline Matrix theta_matrix(const PoissonStructure& s, std::span<const double> x) {
  const int d = s.dim();
  const Bindings b = s.space().bind(x);
  Matrix m(d, d);
  for (int a = 0; a < d; ++a)
    for (int c = a + 1; c < d; ++c) {
      const double v = eval(s.entry(a, c), b);
      m(a, c) = v;
      m(c, a) = -v;
    }
  return m;
}

inline Matrix theta_matrix(const PoissonStructure& s, const PhasePoint& x) { return theta_matrix(s, x.values()); }

/// Closed-form inverse of the constant-theta-F bracket matrix, so that
/// Theta * omega = I.  Undefined on the reduction locus theta F = 1.
inline Matrix constant_omega(double theta, double F) {
  const double pf = 1.0 - theta * F;
  if (pf == 0.0) throw std::domain_error("omega undefined at theta F = 1");
  const double rows[4][4] = {{0, F, -1, 0}, {-F, 0, 0, -1}, {1, 0, 0, theta}, {0, 1, -theta, 0}};
  Matrix w(4, 4);
  for (int a = 0; a < 4; ++a)
    for (int b = 0; b < 4; ++b) w(a, b) = rows[a][b] / pf;
  return w;
}

/// {A, B} = Theta_ab dA/dx_a dB/dx_b, summed over a < b so that the result is
/// exactly antisymmetric in (A, B).
inline double bracket(const PoissonStructure& s, const Expression& A, const Expression& B,
                      const PhasePoint& x) {
  const Bindings b = s.bind(x);
  const Matrix t = theta_matrix(s, x);
  const auto ga = gradient(A, b);
  const auto gb = gradient(B, b);
  double sum = 0.0;
  for (int a = 0; a < s.dim(); ++a)
    for (int c = a + 1; c < s.dim(); ++c) sum += t(a, c) * (ga[a] * gb[c] - ga[c] * gb[a]);
  return sum;
}

/// Theta at x together with dTheta_bc/dx_d.
struct StructureJet {
  Matrix theta;
  std::vector<double> dtheta;  // [(b * dim + c) * dim + d]
  int dim = 0;

  double d(int b, int c, int wrt) const { return dtheta[(static_cast<std::size_t>(b) * dim + c) * dim + wrt]; }
};

inline StructureJet structure_jet(const PoissonStructure& s, const PhasePoint& x) {
  const int d = s.dim();
  StructureJet jet{theta_matrix(s, x), std::vector<double>(static_cast<std::size_t>(d) * d * d, 0.0), d};
  const Bindings b = s.bind(x);
  for (int a = 0; a < d; ++a)
    for (int c = a + 1; c < d; ++c) {
      if (s.entry_is_constant(a, c)) continue;
      const auto g = gradient(s.entry(a, c), b);
      for (int w = 0; w < d; ++w) {
        jet.dtheta[(static_cast<std::size_t>(a) * d + c) * d + w] = g[w];
        jet.dtheta[(static_cast<std::size_t>(c) * d + a) * d + w] = -g[w];
      }
    }
  return jet;
}

/// D_k f for n = 2 structures, k = 1..4: the coefficient of dH/dx_k in the
/// time derivative of f, with the sign convention D2 = -{., q2}-column.
inline double d_operator(const Matrix& theta, int k, std::span<const double> grad_f) {
  static constexpr double sign[4] = {1.0, -1.0, 1.0, 1.0};
  double s = 0.0;
  for (int a = 0; a < 4; ++a) s += theta(a, k - 1) * grad_f[a];
  return sign[k - 1] * s;
}

struct NamedResidual {
  std::string name;
  double value = 0.0;
};

inline double max_abs(std::span<const NamedResidual> rs) {
  double m = 0.0;
  for (const auto& r : rs) m = std::max(m, std::abs(r.value));
  return m;
}

inline std::optional<double> find_residual(std::span<const NamedResidual> rs, std::string_view name) {
  for (const auto& r : rs)
    if (r.name == name) return r.value;
  return std::nullopt;
}

struct JacobiReport {
  double generic_max = 0.0;            // max |{x_a,{x_b,x_c}} + cyclic|
  std::array<int, 3> worst_triple{0, 1, 2};
  std::vector<NamedResidual> named;    // kind-specific identities, signed

  double named_max() const { return max_abs(named); }
  std::optional<double> named_value(std::string_view name) const { return find_residual(named, name); }
};

namespace detail {

inline std::string pair_label(int i, int j) { return std::to_string(i + 1) + std::to_string(j + 1); }

inline void theta_f_identities(const PoissonStructure& s, const StructureJet& jet, JacobiReport& out) {
  const auto& sp = s.space();
  const int n = s.dof();
  auto th = [&](int i, int j) { return jet.theta(sp.q(i), sp.q(j)); };
  auto F = [&](int i, int j) { return jet.theta(sp.p(i), sp.p(j)); };
  auto dth = [&](int i, int j, int wrt) { return jet.d(sp.q(i), sp.q(j), wrt); };
  auto dF = [&](int i, int j, int wrt) { return jet.d(sp.p(i), sp.p(j), wrt); };

  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      for (int k = 0; k < n; ++k) {
        double v = dF(i, j, sp.p(k));
        for (int m = 0; m < n; ++m) v -= dF(i, j, sp.q(m)) * th(m, k);
        out.named.push_back({"{q" + std::to_string(k + 1) + ",F" + pair_label(i, j) + "}", v});
      }
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      for (int k = 0; k < n; ++k) {
        double v = dth(i, j, sp.q(k));
        for (int m = 0; m < n; ++m) v += dth(i, j, sp.p(m)) * F(m, k);
        out.named.push_back({"{theta" + pair_label(i, j) + ",p" + std::to_string(k + 1) + "}", v});
      }
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      for (int k = j + 1; k < n; ++k) {
        const int cyc[3][3] = {{i, j, k}, {j, k, i}, {k, i, j}};
        double vf = 0.0, vt = 0.0;
        for (const auto& c : cyc) {
          vf += dF(c[0], c[1], sp.q(c[2]));
          vt += dth(c[0], c[1], sp.p(c[2]));
          for (int m = 0; m < n; ++m) {
            vf += dF(c[0], c[1], sp.p(m)) * F(m, c[2]);
            vt -= dth(c[0], c[1], sp.q(m)) * th(m, c[2]);
          }
        }
        const std::string label = pair_label(i, j) + std::to_string(k + 1);
        out.named.push_back({"{F,p}+cyclic" + label, vf});
        out.named.push_back({"{q,theta}+cyclic" + label, vt});
      }
  if (n == 2) {
    // Halved system valid once F = 1/theta.
    const double t = th(0, 1);
    out.named.push_back({"reduced:theta*dtheta/dq1-dtheta/dp2", t * dth(0, 1, 0) - dth(0, 1, 3)});
    out.named.push_back({"reduced:theta*dtheta/dq2+dtheta/dp1", t * dth(0, 1, 1) + dth(0, 1, 2)});
  }
}

inline void planar_identities(const StructureJet& jet, JacobiReport& out) {
  auto D = [&](int k, int b, int c) {
    std::array<double, 4> g{};
    for (int w = 0; w < 4; ++w) g[w] = jet.d(b, c, w);
    return d_operator(jet.theta, k, g);
  };
  // Entries: theta=(0,1), F=(2,3), g11=(0,2), g12=(0,3), g21=(1,2), g22=(1,3).
  out.named.push_back({"D3theta+D1g21+D2g11", D(3, 0, 1) + D(1, 1, 2) + D(2, 0, 2)});
  out.named.push_back({"D4theta+D1g22+D2g12", D(4, 0, 1) + D(1, 1, 3) + D(2, 0, 3)});
  out.named.push_back({"D1F-D3g12+D4g11", D(1, 2, 3) - D(3, 0, 3) + D(4, 0, 2)});
  out.named.push_back({"-D2F-D3g22+D4g21", -D(2, 2, 3) - D(3, 1, 3) + D(4, 1, 2)});
}

}  // namespace detail

/// Generic Jacobiator max over all triples plus the named identities of the
/// structure's kind.
inline JacobiReport jacobi_residual(const PoissonStructure& s, const PhasePoint& x) {
  const StructureJet jet = structure_jet(s, x);
  const int d = s.dim();
  JacobiReport out;
  for (int a = 0; a < d; ++a)
    for (int b = a + 1; b < d; ++b)
      for (int c = b + 1; c < d; ++c) {
        double v = 0.0;
        for (int w = 0; w < d; ++w)
          v += jet.theta(a, w) * jet.d(b, c, w) + jet.theta(b, w) * jet.d(c, a, w) +
               jet.theta(c, w) * jet.d(a, b, w);
        if (std::abs(v) > out.generic_max) {
          out.generic_max = std::abs(v);
          out.worst_triple = {a, b, c};
        }
      }
  if (s.has_theta_f_form()) detail::theta_f_identities(s, jet, out);
  else if (s.kind() == StructureKind::GeneralPlanar) detail::planar_identities(jet, out);
  return out;
}

struct DegeneracyReport {
  double det = 0.0;
  std::optional<double> planar_condition;  // theta F - g11 g22 + g12 g21
  std::optional<double> matrix_condition;  // max_mn |theta_mk F_kn + delta_mn|
};

inline DegeneracyReport degeneracy(const PoissonStructure& s, const PhasePoint& x) {
  const Matrix t = theta_matrix(s, x);
  DegeneracyReport r;
  r.det = determinant(t);
  if (s.kind() == StructureKind::GeneralPlanar) {
    r.planar_condition = t(0, 1) * t(2, 3) - t(0, 2) * t(1, 3) + t(0, 3) * t(1, 2);
  }
  if (s.has_theta_f_form()) {
    const auto& sp = s.space();
    const int n = s.dof();
    double worst = 0.0;
    for (int m = 0; m < n; ++m)
      for (int c = 0; c < n; ++c) {
        double v = m == c ? 1.0 : 0.0;
        for (int k = 0; k < n; ++k) v += t(sp.q(m), sp.q(k)) * t(sp.p(k), sp.p(c));
        worst = std::max(worst, std::abs(v));
      }
    r.matrix_condition = worst;
  }
  return r;
}

}  // namespace poissonred

#endif  // POISSONRED_POISSON_HPP
