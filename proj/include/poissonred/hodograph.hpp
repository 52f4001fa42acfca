#ifndef POISSONRED_HODOGRAPH_HPP
#define POISSONRED_HODOGRAPH_HPP

// Solutions of u_x - v u_y = 0, v_x - u v_y = 0 obtained through the
// hodograph transform x = f(u) + g(v), y = -int u f'(u) du - int v g'(v) dv.

#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "poissonred/expr.hpp"
#include "poissonred/linalg.hpp"

namespace poissonred {

class QuadratureError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Adaptive Simpson quadrature of f on [a, b] to absolute tolerance tol.
inline double adaptive_simpson(const std::function<double(double)>& f, double a, double b, double tol = 1e-10,
                               int max_depth = 40) {
  if (a == b) return 0.0;
  struct Rec {
    const std::function<double(double)>& f;
    int max_depth;
    double run(double a, double b, double fa, double fm, double fb, double whole, double tol, int depth) const {
      const double m = 0.5 * (a + b);
      const double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
      const double flm = f(lm), frm = f(rm);
      const double left = (m - a) / 6 * (fa + 4 * flm + fm);
      const double right = (b - m) / 6 * (fm + 4 * frm + fb);
      const double delta = left + right - whole;
      if (std::abs(delta) <= 15 * tol) return left + right + delta / 15;
      if (depth >= max_depth) throw QuadratureError("adaptive Simpson did not reach tolerance");
      return run(a, m, fa, flm, fm, left, tol / 2, depth + 1) + run(m, b, fm, frm, fb, right, tol / 2, depth + 1);
    }
  };
  const double fa = f(a), fb = f(b), fm = f(0.5 * (a + b));
  const double whole = (b - a) / 6 * (fa + 4 * fm + fb);
  return Rec{f, max_depth}.run(a, b, fa, fm, fb, whole, tol, 0);
}

enum class HodographKind { Linear, Log, LogLog, CustomFG, Fields };

inline std::string_view to_string(HodographKind k) {
  switch (k) {
    case HodographKind::Linear: return "linear";
    case HodographKind::Log: return "log";
    case HodographKind::LogLog: return "loglog";
    case HodographKind::CustomFG: return "custom-fg";
    case HodographKind::Fields: return "fields";
  }
  return "?";
}

/// Unit tag attached to a family parameter in reports; never used numerically.
inline std::string unit_of(HodographKind k, std::string_view param) {
  if (param == "alpha") return k == HodographKind::Linear ? "[length]^3" : "[length]";
  if (param == "u0" || param == "v0") return "[length]^-2";
  return "";
}

struct HodographParams {
  std::optional<double> alpha;
  std::optional<double> u0;
  std::optional<double> v0;
  int branch = +1;                 // loglog: +1 puts the + root in u
  std::optional<Expression> f;     // custom-fg, expressions in s
  std::optional<Expression> g;
  double u_base = 0.0;             // lower limits of the y quadratures
  double v_base = 0.0;
  std::array<double, 2> guess{1.0, -1.0};  // Newton start for the field recovery
  double quad_tol = 1e-10;
};

class HodographFamily {
 public:
  HodographKind kind() const noexcept { return kind_; }
  const HodographParams& params() const noexcept { return params_; }
  bool closed_form() const noexcept { return kind_ != HodographKind::CustomFG; }

  const Expression& u_field() const { return require_closed(u_); }
  const Expression& v_field() const { return require_closed(v_); }

  static HodographFamily from_fields(Expression u, Expression v) {
    HodographFamily fam;
    fam.kind_ = HodographKind::Fields;
    fam.u_ = std::move(u);
    fam.v_ = std::move(v);
    return fam;
  }

  static HodographFamily custom(HodographParams p) {
    if (!p.f || !p.g) throw std::invalid_argument("custom-fg family needs f and g");
    for (const auto* e : {&*p.f, &*p.g}) {
      for (const auto& v : e->variables())
        if (v != "s") throw std::invalid_argument("f and g must be functions of s alone, found '" + v + "'");
      if (!e->parameters().empty())
        throw std::invalid_argument("unbound parameter '" + *e->parameters().begin() + "' in f or g");
    }
    HodographFamily fam;
    fam.kind_ = HodographKind::CustomFG;
    fam.params_ = std::move(p);
    return fam;
  }

  /// (u, v) at (x, y).  Custom families invert x = X(u, v), y = Y(u, v) by
  /// damped Newton from `guess` (default: the configured guess).
  std::optional<std::array<double, 2>> fields_at(double x, double y,
                                                 std::optional<std::array<double, 2>> guess = std::nullopt) const {
    if (closed_form()) {
      try {
        const Bindings b = bind_xy(x, y);
        return std::array<double, 2>{eval(*u_, b), eval(*v_, b)};
      } catch (const DomainError&) {
        return std::nullopt;
      }
    }
    // Fall back to the configured guess and its mirror image, which sits on
    // the other side of the singular line u = v.
    const auto& g0 = params_.guess;
    if (guess)
      if (auto r = invert(x, y, *guess)) return r;
    if (auto r = invert(x, y, g0)) return r;
    return invert(x, y, {g0[1], g0[0]});
  }

  /// The inverse map (u, v) -> (x, y) built from f and g.
  std::array<double, 2> xy_of(double u, double v) const {
    require_fg();
    return {f_at(u) + g_at(v), -integral(*params_.f, params_.u_base, u) - integral(*params_.g, params_.v_base, v)};
  }

  static Bindings bind_xy(double x, double y) {
    Bindings b;
    b.set_variable("x", x);
    b.set_variable("y", y);
    return b;
  }

 private:
  friend HodographFamily build_family(HodographKind, const HodographParams&);

  const Expression& require_closed(const std::optional<Expression>& e) const {
    if (!e) throw std::logic_error("family has no closed-form fields");
    return *e;
  }
  void require_fg() const {
    if (!params_.f || !params_.g) throw std::logic_error("family has no generator functions");
  }

  static Bindings bind_s(double s) {
    Bindings b;
    b.set_variable("s", s);
    return b;
  }
  double f_at(double u) const { return eval(*params_.f, bind_s(u)); }
  double g_at(double v) const { return eval(*params_.g, bind_s(v)); }
  double fp(double u) const { return derivative(*params_.f, "s", bind_s(u)); }
  double gp(double v) const { return derivative(*params_.g, "s", bind_s(v)); }
  double integral(const Expression& e, double lo, double hi) const {
    return adaptive_simpson([&](double s) { return s * derivative(e, "s", bind_s(s)); }, lo, hi, params_.quad_tol);
  }

  std::optional<std::array<double, 2>> invert(double x, double y, std::array<double, 2> w) const {
    try {
      for (int it = 0; it < 100; ++it) {
        const auto xy = xy_of(w[0], w[1]);
        const double r0 = xy[0] - x, r1 = xy[1] - y;
        const double norm = std::hypot(r0, r1);
        if (norm <= 1e-13 * (1 + std::hypot(x, y))) return w;
        const double a = fp(w[0]), b = gp(w[1]);
        const double c = -w[0] * a, d = -w[1] * b;
        const double det = a * d - b * c;
        if (det == 0.0 || !std::isfinite(det)) return std::nullopt;
        const double du = (d * r0 - b * r1) / det, dv = (a * r1 - c * r0) / det;
        double step = 1.0;
        for (int k = 0; k < 30; ++k, step *= 0.5) {
          const std::array<double, 2> trial{w[0] - step * du, w[1] - step * dv};
          try {
            const auto t = xy_of(trial[0], trial[1]);
            if (std::hypot(t[0] - x, t[1] - y) < norm || k == 29) {
              w = trial;
              break;
            }
          } catch (const DomainError&) {
          }
        }
      }
    } catch (const DomainError&) {
    } catch (const QuadratureError&) {
    }
    return std::nullopt;
  }

  HodographKind kind_ = HodographKind::Fields;
  HodographParams params_;
  std::optional<Expression> u_, v_;
};

inline HodographFamily build_family(HodographKind kind, const HodographParams& p) {
  auto need = [&](const std::optional<double>& v, const char* name) {
    if (!v) throw std::invalid_argument(std::string(to_string(kind)) + " family needs parameter " + name);
    return *v;
  };
  if (kind == HodographKind::CustomFG) return HodographFamily::custom(p);
  if (kind == HodographKind::Fields) throw std::invalid_argument("use HodographFamily::from_fields");
  HodographFamily fam;
  fam.kind_ = kind;
  fam.params_ = p;
  const double alpha = need(p.alpha, "alpha");
  if (alpha == 0.0) throw std::invalid_argument("alpha must be nonzero");
  std::map<std::string, double, std::less<>> values{{"alpha", alpha}};
  const std::vector<std::string> xy{"x", "y"};
  switch (kind) {
    case HodographKind::Linear:
      fam.u_ = bind_parameters(parse("-y/x + x/(2*alpha)", xy), values);
      fam.v_ = bind_parameters(parse("-y/x - x/(2*alpha)", xy), values);
      fam.params_.f = bind_parameters(parse("alpha*s", {"s"}), values);
      fam.params_.g = bind_parameters(parse("-alpha*s", {"s"}), values);
      break;
    case HodographKind::Log:
      values["u0"] = need(p.u0, "u0");
      fam.u_ = bind_parameters(parse("(y/alpha)*exp(x/alpha)/(1 - exp(x/alpha))", xy), values);
      fam.v_ = bind_parameters(parse("(y/alpha)/(1 - exp(x/alpha))", xy), values);
      fam.params_.f = bind_parameters(parse("alpha*log(s/u0)", {"s"}), values);
      fam.params_.g = bind_parameters(parse("-alpha*log(s/u0)", {"s"}), values);
      break;
    case HodographKind::LogLog: {
      values["u0"] = need(p.u0, "u0");
      values["v0"] = need(p.v0, "v0");
      const char* plus = "(-y/alpha + sqrt(y^2/alpha^2 - 4*u0*v0*exp(x/alpha)))/2";
      const char* minus = "(-y/alpha - sqrt(y^2/alpha^2 - 4*u0*v0*exp(x/alpha)))/2";
      fam.u_ = bind_parameters(parse(p.branch >= 0 ? plus : minus, xy), values);
      fam.v_ = bind_parameters(parse(p.branch >= 0 ? minus : plus, xy), values);
      fam.params_.f = bind_parameters(parse("alpha*log(s/u0)", {"s"}), values);
      fam.params_.g = bind_parameters(parse("alpha*log(s/v0)", {"s"}), values);
      break;
    }
    default:
      break;
  }
  return fam;
}

// ---------------------------------------------------------------------------
// Grids

struct ExclusionBands {
  double x = 1e-3;             // |x| >= x
  double exp = 1e-3;           // |1 - e^{x/alpha}| >= exp
  double discriminant = 1e-6;  // y^2/alpha^2 - 4 u0 v0 e^{x/alpha} >= discriminant
};

struct Grid2D {
  double x_min = -1, x_max = 1, y_min = -1, y_max = 1;
  int nx = 21, ny = 21;
  ExclusionBands bands;

  static double node(double lo, double hi, int i, int n) {
    if (n <= 1) return lo;
    if (i == n - 1) return hi;
    return lo + (hi - lo) * static_cast<double>(i) / (n - 1);
  }
  double x(int i) const { return node(x_min, x_max, i, nx); }
  double y(int j) const { return node(y_min, y_max, j, ny); }
};

inline double loglog_discriminant(const HodographParams& p, double x, double y) {
  const double a = *p.alpha;
  return y * y / (a * a) - 4 * *p.u0 * *p.v0 * std::exp(x / a);
}

/// The family-specific singular set, widened by the exclusion bands.
inline bool admissible(const HodographFamily& fam, const Grid2D& g, double x, double y) {
  switch (fam.kind()) {
    case HodographKind::Linear:
    case HodographKind::Fields:
      return std::abs(x) >= g.bands.x;
    case HodographKind::Log:
      return std::abs(x) >= g.bands.x && std::abs(1 - std::exp(x / *fam.params().alpha)) >= g.bands.exp;
    case HodographKind::LogLog:
      return loglog_discriminant(fam.params(), x, y) >= g.bands.discriminant;
    case HodographKind::CustomFG:
      return true;
  }
  return false;
}

/// Visits admissible grid nodes in row-major order (y outer, x inner) with
/// the field values; custom families continue Newton from the previous node.
inline std::size_t scan(const HodographFamily& fam, const Grid2D& g,
                        const std::function<void(double, double, const std::array<double, 2>&)>& visit) {
  std::size_t excluded = 0;
  std::optional<std::array<double, 2>> last, row_start;
  for (int j = 0; j < g.ny; ++j) {
    last = row_start;
    row_start.reset();
    for (int i = 0; i < g.nx; ++i) {
      const double x = g.x(i), y = g.y(j);
      if (!admissible(fam, g, x, y)) {
        ++excluded;
        continue;
      }
      const auto uv = fam.fields_at(x, y, last);
      if (!uv) {
        ++excluded;
        continue;
      }
      if (!row_start) row_start = uv;
      last = uv;
      visit(x, y, *uv);
    }
  }
  return excluded;
}

struct PdeResidual {
  double max_res1 = 0.0;            // |u_x - v u_y|
  double max_res2 = 0.0;            // |v_x - u v_y|
  double min_abs_jacobian = std::numeric_limits<double>::infinity();  // over nodes with u != v
  double min_abs_u_minus_v = std::numeric_limits<double>::infinity();
  std::size_t points = 0;
  std::size_t excluded = 0;
};

inline PdeResidual pde_residual(const HodographFamily& fam, const Grid2D& g) {
  PdeResidual r;
  r.excluded = scan(fam, g, [&](double x, double y, const std::array<double, 2>& uv) {
    double ux, uy, vx, vy;
    if (fam.closed_form()) {
      const Bindings b = HodographFamily::bind_xy(x, y);
      const auto gu = gradient(fam.u_field(), b);
      const auto gv = gradient(fam.v_field(), b);
      ux = gu[0], uy = gu[1], vx = gv[0], vy = gv[1];
    } else {
      const double hx = 1e-6 * std::max(1.0, std::abs(x)), hy = 1e-6 * std::max(1.0, std::abs(y));
      const auto xp = fam.fields_at(x + hx, y, uv), xm = fam.fields_at(x - hx, y, uv);
      const auto yp = fam.fields_at(x, y + hy, uv), ym = fam.fields_at(x, y - hy, uv);
      if (!xp || !xm || !yp || !ym) {
        ++r.excluded;
        return;
      }
      ux = ((*xp)[0] - (*xm)[0]) / (2 * hx);
      vx = ((*xp)[1] - (*xm)[1]) / (2 * hx);
      uy = ((*yp)[0] - (*ym)[0]) / (2 * hy);
      vy = ((*yp)[1] - (*ym)[1]) / (2 * hy);
    }
    const double u = uv[0], v = uv[1];
    r.max_res1 = std::max(r.max_res1, std::abs(ux - v * uy));
    r.max_res2 = std::max(r.max_res2, std::abs(vx - u * vy));
    r.min_abs_u_minus_v = std::min(r.min_abs_u_minus_v, std::abs(u - v));
    if (u != v) r.min_abs_jacobian = std::min(r.min_abs_jacobian, std::abs(ux * vy - uy * vx));
    ++r.points;
  });
  return r;
}

/// Residuals of y_u + u x_u = 0 and y_v + v x_v = 0 for the inverse map, by
/// central differences at (u, v).  Steps scale with |u|, |v| and each
/// residual is relative to 1 + |u x_u| (resp. 1 + |v x_v|).
inline std::array<double, 2> inverse_map_residual(const HodographFamily& fam, double u, double v, double h = 1e-5) {
  const double hu = h * (1 + std::abs(u)), hv = h * (1 + std::abs(v));
  const auto up = fam.xy_of(u + hu, v), um = fam.xy_of(u - hu, v);
  const auto vp = fam.xy_of(u, v + hv), vm = fam.xy_of(u, v - hv);
  const double xu = (up[0] - um[0]) / (2 * hu), yu = (up[1] - um[1]) / (2 * hu);
  const double xv = (vp[0] - vm[0]) / (2 * hv), yv = (vp[1] - vm[1]) / (2 * hv);
  return {std::abs(yu + u * xu) / (1 + std::abs(u * xu)), std::abs(yv + v * xv) / (1 + std::abs(v * xv))};
}

// ---------------------------------------------------------------------------
// Approach to u = v = -y/x as alpha grows

struct LimitRow {
  double alpha = 0.0;
  double max_dev_u = 0.0;       // max |u + y/x|
  double max_dev_v = 0.0;       // max |v + y/x|
  double max_u_minus_v = 0.0;   // max |u - v|
  std::size_t points = 0;
};

struct LimitTable {
  HodographKind kind = HodographKind::Linear;
  std::vector<LimitRow> rows;
  double fitted_order = 0.0;    // slope of log max_dev_u against log(1/alpha)
};

inline LimitTable limit_sweep(HodographKind kind, std::span<const double> alphas, const Grid2D& grid,
                              HodographParams base = {}) {
  if (kind == HodographKind::LogLog)
    throw std::invalid_argument("loglog family keeps u != v for every alpha; it has no limit to sweep");
  if (kind != HodographKind::Linear && kind != HodographKind::Log)
    throw std::invalid_argument("limit sweep supports the linear and log families");
  for (std::size_t k = 1; k < alphas.size(); ++k)
    if (!(alphas[k] > alphas[k - 1])) throw std::invalid_argument("alphas must increase");
  if (kind == HodographKind::Log && !base.u0) base.u0 = 1.0;
  LimitTable t;
  t.kind = kind;
  std::vector<double> lx, ly;
  for (double a : alphas) {
    base.alpha = a;
    const auto fam = build_family(kind, base);
    LimitRow row;
    row.alpha = a;
    scan(fam, grid, [&](double x, double y, const std::array<double, 2>& uv) {
      const double lim = -y / x;
      row.max_dev_u = std::max(row.max_dev_u, std::abs(uv[0] - lim));
      row.max_dev_v = std::max(row.max_dev_v, std::abs(uv[1] - lim));
      row.max_u_minus_v = std::max(row.max_u_minus_v, std::abs(uv[0] - uv[1]));
      ++row.points;
    });
    if (row.max_dev_u > 0) {
      lx.push_back(std::log(1.0 / a));
      ly.push_back(std::log(row.max_dev_u));
    }
    t.rows.push_back(row);
  }
  if (lx.size() >= 2) t.fitted_order = linear_fit(lx, ly).slope;
  return t;
}

}  // namespace poissonred

#endif  // POISSONRED_HODOGRAPH_HPP
