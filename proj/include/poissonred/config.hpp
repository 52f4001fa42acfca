#ifndef POISSONRED_CONFIG_HPP
#define POISSONRED_CONFIG_HPP

// Run configuration: a versioned JSON document validated against a fixed
// schema.  Every error names the JSON path of the offending value.

#include <cstdint>
#include <filesystem>
#include <initializer_list>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "poissonred/dynamics.hpp"
#include "poissonred/hodograph.hpp"
#include "poissonred/io.hpp"
#include "poissonred/poisson.hpp"
#include "poissonred/reduction.hpp"

namespace poissonred {

class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string path, const std::string& message)
      : std::runtime_error((path.empty() ? std::string("/") : path) + ": " + message), path_(std::move(path)) {}
  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

struct CloudConfig {
  std::vector<double> center;
  double width = 1.0;
  std::size_t count = 100;
};

struct IntegratorConfig {
  Method method = Method::RK4;
  double dt = 1e-3;
  double t_end = 10.0;
  std::vector<double> x0;
};

struct ReduceConfig {
  std::vector<double> reference;
  std::size_t count = 200;
  double width = 0.5;
  std::string sampler = "surface";  // "surface" or "leaf"
  int n_max = 5;
  double reduced_t_end = 20.0;
  double reduced_dt = 1e-3;
  std::optional<double> full_epsilon;
};

struct SweepConfig {
  double theta = 1.0;
  std::vector<double> epsilons;
};

struct HodographConfig {
  HodographKind kind = HodographKind::Linear;
  HodographParams params;
  std::vector<double> alphas;
  Grid2D grid;
};

struct Expectation {
  enum class Op { Max, Min, Near, Equals };
  std::string metric;
  Op op = Op::Max;
  double value = 0.0;       // bound, or target for Near
  double tol = 0.0;         // Near only
  std::string text;         // Equals with a string metric
  bool is_text = false;
  std::optional<std::string> anchor;
};

struct RunConfig {
  int version = 1;
  int n = 1;
  std::optional<PoissonStructure> structure;
  std::vector<DomainFilter> filters;
  std::vector<std::string> hamiltonian_sources;
  std::vector<Expression> hamiltonians;
  std::vector<Expression> observables;
  std::vector<Monitor> monitors;
  std::optional<CloudConfig> cloud;
  std::optional<IntegratorConfig> integrator;
  std::optional<ReduceConfig> reduction;
  std::optional<SweepConfig> sweep;
  std::optional<HodographConfig> hodograph;
  std::uint64_t seed = 0;
  std::filesystem::path out_dir = "out";
  bool write_csv = true;
  std::vector<Expectation> expect;
  std::string digest;

  const PoissonStructure& require_structure() const {
    if (!structure) throw ConfigError("/structure", "missing key");
    return *structure;
  }
  const Expression& require_hamiltonian() const {
    if (hamiltonians.empty()) throw ConfigError("/hamiltonian", "missing key");
    return hamiltonians.front();
  }
};

namespace detail {

using json = nlohmann::json;

// A JSON value plus its path; typed accessors raise ConfigError.
class Cursor {
 public:
  Cursor(const json& j, std::string path) : j_(&j), path_(std::move(path)) {}

  const std::string& path() const noexcept { return path_; }
  const json& value() const noexcept { return *j_; }

  [[noreturn]] void fail(const std::string& message) const { throw ConfigError(path_, message); }

  void require_object(std::initializer_list<const char*> allowed) const {
    if (!j_->is_object()) fail("expected object");
    std::set<std::string> ok(allowed.begin(), allowed.end());
    for (auto it = j_->begin(); it != j_->end(); ++it)
      if (!ok.count(it.key())) Cursor(it.value(), path_ + "/" + it.key()).fail("unknown key");
  }

  bool has(const char* key) const { return j_->is_object() && j_->contains(key); }
  Cursor at(const char* key) const {
    if (!has(key)) Cursor(*j_, path_ + "/" + key).fail("missing key");
    return Cursor((*j_)[key], path_ + "/" + key);
  }
  std::optional<Cursor> opt(const char* key) const {
    if (!has(key)) return std::nullopt;
    return Cursor((*j_)[key], path_ + "/" + key);
  }

  double number() const {
    if (!j_->is_number()) fail("expected number");
    return j_->get<double>();
  }
  double positive() const {
    const double v = number();
    if (!(v > 0)) fail("expected a positive number");
    return v;
  }
  long long integer() const {
    if (!j_->is_number_integer()) fail("expected integer");
    return j_->get<long long>();
  }
  std::size_t count() const {
    const long long v = integer();
    if (v < 1) fail("expected a positive integer");
    return static_cast<std::size_t>(v);
  }
  bool boolean() const {
    if (!j_->is_boolean()) fail("expected boolean");
    return j_->get<bool>();
  }
  std::string string() const {
    if (!j_->is_string()) fail("expected string");
    return j_->get<std::string>();
  }
  std::vector<Cursor> array() const {
    if (!j_->is_array()) fail("expected array");
    std::vector<Cursor> out;
    for (std::size_t k = 0; k < j_->size(); ++k) out.emplace_back((*j_)[k], path_ + "/" + std::to_string(k));
    return out;
  }
  std::vector<double> numbers(std::size_t expected = 0) const {
    std::vector<double> out;
    for (const auto& c : array()) out.push_back(c.number());
    if (expected && out.size() != expected)
      fail("expected " + std::to_string(expected) + " numbers, got " + std::to_string(out.size()));
    return out;
  }

  /// An expression given as text or as a bare number.
  Expression expression(const std::vector<std::string>& extra_variables = {}) const {
    if (j_->is_number()) return Expression::constant(j_->get<double>());
    const std::string src = string();
    try {
      return parse(src, extra_variables);
    } catch (const ParseError& e) {
      fail("parse error at offset " + std::to_string(e.position()) + " in \"" + src + "\": " + e.what());
    }
  }

 private:
  const json* j_;
  std::string path_;
};

inline void check_variables(const Cursor& c, const Expression& e, const PhaseSpace& space) {
  for (const auto& v : e.variables())
    if (!space.index_of(v)) c.fail("expression references '" + v + "', which is not a phase-space variable");
  if (!e.parameters().empty()) c.fail("unbound parameter '" + *e.parameters().begin() + "'");
}

// Matrix entries keyed "i,j" with 1-based indices.
inline std::vector<MatrixEntry> read_entries(const Cursor& c, const PhaseSpace& space) {
  if (!c.value().is_object()) c.fail("expected object of \"i,j\": expression");
  std::vector<MatrixEntry> out;
  for (auto it = c.value().begin(); it != c.value().end(); ++it) {
    const Cursor e(it.value(), c.path() + "/" + it.key());
    int i = 0, j = 0;
    char tail = 0;
    if (std::sscanf(it.key().c_str(), "%d,%d%c", &i, &j, &tail) != 2 || i < 1 || j < 1)
      e.fail("key must be \"i,j\" with 1-based indices");
    Expression ex = e.expression();
    check_variables(e, ex, space);
    out.push_back({i - 1, j - 1, std::move(ex)});
  }
  return out;
}

inline PoissonStructure read_structure(const Cursor& c, int n, std::vector<DomainFilter>& filters) {
  c.require_object({"kind", "theta", "F", "theta_entries", "F_entries", "functions", "entries", "filters"});
  const Cursor kind_c = c.at("kind");
  const std::string kind = kind_c.string();
  const PhaseSpace space(n);
  StructureSpec spec;
  spec.dof = n;
  if (kind == "canonical") {
    spec.kind = StructureKind::Canonical;
  } else if (kind == "constant-theta-F") {
    spec.kind = StructureKind::ConstantThetaF;
    spec.theta = c.at("theta").number();
    spec.F = c.at("F").number();
  } else if (kind == "theta-F-field") {
    spec.kind = StructureKind::ThetaFField;
    if (auto t = c.opt("theta_entries")) spec.theta_entries = read_entries(*t, space);
    if (auto f = c.opt("F_entries")) spec.F_entries = read_entries(*f, space);
  } else if (kind == "general-planar") {
    spec.kind = StructureKind::GeneralPlanar;
    const Cursor f = c.at("functions");
    f.require_object({"theta", "F", "g11", "g12", "g21", "g22"});
    auto get = [&](const char* name) {
      const Cursor e = f.at(name);
      Expression ex = e.expression();
      check_variables(e, ex, space);
      return ex;
    };
    spec.planar = PlanarFunctions{get("theta"), get("F"), get("g11"), get("g12"), get("g21"), get("g22")};
  } else if (kind == "custom") {
    spec.kind = StructureKind::Custom;
    spec.entries = read_entries(c.at("entries"), space);
  } else {
    kind_c.fail("unknown structure kind '" + kind +
                "' (expected canonical, constant-theta-F, theta-F-field, general-planar or custom)");
  }
  if (auto fl = c.opt("filters")) {
    for (const auto& item : fl->array()) {
      item.require_object({"expr", "min_abs"});
      const Cursor e = item.at("expr");
      Expression ex = e.expression();
      check_variables(e, ex, space);
      const double m = item.at("min_abs").number();
      if (m < 0) item.at("min_abs").fail("expected a nonnegative number");
      filters.push_back({std::move(ex), m});
    }
  }
  try {
    return build_structure(spec);
  } catch (const StructureError& e) {
    c.fail(e.what());
  }
}

inline Method read_method(const Cursor& c) {
  const std::string m = c.string();
  if (m == "rk4") return Method::RK4;
  if (m == "midpoint") return Method::ImplicitMidpoint;
  c.fail("unknown method '" + m + "' (expected rk4 or midpoint)");
}

inline HodographConfig read_hodograph(const Cursor& c) {
  c.require_object({"kind", "params", "alphas", "grid", "bands", "f", "g", "bases", "guess", "quad_tol"});
  HodographConfig h;
  const Cursor k = c.at("kind");
  const std::string kind = k.string();
  if (kind == "linear") h.kind = HodographKind::Linear;
  else if (kind == "log") h.kind = HodographKind::Log;
  else if (kind == "loglog") h.kind = HodographKind::LogLog;
  else if (kind == "custom-fg") h.kind = HodographKind::CustomFG;
  else k.fail("unknown family '" + kind + "' (expected linear, log, loglog or custom-fg)");
  if (auto p = c.opt("params")) {
    p->require_object({"alpha", "u0", "v0", "branch"});
    if (auto a = p->opt("alpha")) {
      h.params.alpha = a->number();
      if (*h.params.alpha == 0.0) a->fail("alpha must be nonzero");
    }
    if (auto u = p->opt("u0")) h.params.u0 = u->number();
    if (auto v = p->opt("v0")) h.params.v0 = v->number();
    if (auto b = p->opt("branch")) {
      const long long br = b->integer();
      if (br != 1 && br != -1) b->fail("branch must be 1 or -1");
      h.params.branch = static_cast<int>(br);
    }
  }
  auto need = [&](const std::optional<double>& v, const char* name) {
    if (!v) c.at("params").at(name);
  };
  if (h.kind != HodographKind::CustomFG) need(h.params.alpha, "alpha");
  if (h.kind == HodographKind::Log || h.kind == HodographKind::LogLog) need(h.params.u0, "u0");
  if (h.kind == HodographKind::LogLog) need(h.params.v0, "v0");
  if (h.kind == HodographKind::CustomFG) {
    for (const char* name : {"f", "g"}) {
      const Cursor e = c.at(name);
      Expression ex = e.expression({"s"});
      for (const auto& v : ex.variables())
        if (v != "s") e.fail("generator must be a function of s alone, found '" + v + "'");
      if (!ex.parameters().empty()) e.fail("unbound parameter '" + *ex.parameters().begin() + "'");
      (name[0] == 'f' ? h.params.f : h.params.g) = std::move(ex);
    }
    if (auto b = c.opt("bases")) {
      const auto v = b->numbers(2);
      h.params.u_base = v[0];
      h.params.v_base = v[1];
    }
    if (auto g = c.opt("guess")) {
      const auto v = g->numbers(2);
      h.params.guess = {v[0], v[1]};
    }
    if (auto q = c.opt("quad_tol")) h.params.quad_tol = q->positive();
  } else {
    for (const char* name : {"f", "g", "bases", "guess"})
      if (auto e = c.opt(name)) e->fail("only used by the custom-fg family");
  }
  if (auto a = c.opt("alphas")) {
    h.alphas = a->numbers();
    if (h.kind == HodographKind::LogLog)
      a->fail("loglog family keeps u != v for every alpha; it has no limit to sweep");
    if (h.kind == HodographKind::CustomFG) a->fail("alpha sweeps apply to the linear and log families");
    for (std::size_t k = 0; k < h.alphas.size(); ++k) {
      if (!(h.alphas[k] > 0)) a->fail("alphas must be positive");
      if (k && !(h.alphas[k] > h.alphas[k - 1])) a->fail("alphas must increase");
    }
  }
  const Cursor g = c.at("grid");
  g.require_object({"x", "y", "nx", "ny"});
  const auto xr = g.at("x").numbers(2), yr = g.at("y").numbers(2);
  if (!(xr[1] >= xr[0])) g.at("x").fail("range must be [min, max]");
  if (!(yr[1] >= yr[0])) g.at("y").fail("range must be [min, max]");
  h.grid.x_min = xr[0];
  h.grid.x_max = xr[1];
  h.grid.y_min = yr[0];
  h.grid.y_max = yr[1];
  h.grid.nx = static_cast<int>(g.at("nx").count());
  h.grid.ny = static_cast<int>(g.at("ny").count());
  if (auto b = c.opt("bands")) {
    b->require_object({"x", "exp", "discriminant"});
    if (auto v = b->opt("x")) h.grid.bands.x = v->number();
    if (auto v = b->opt("exp")) h.grid.bands.exp = v->number();
    if (auto v = b->opt("discriminant")) h.grid.bands.discriminant = v->number();
  }
  return h;
}

inline Expectation read_expectation(const std::string& metric, const Cursor& c) {
  c.require_object({"max", "min", "near", "tol", "equals", "anchor"});
  Expectation e;
  e.metric = metric;
  int ops = 0;
  if (auto v = c.opt("max")) e.op = Expectation::Op::Max, e.value = v->number(), ++ops;
  if (auto v = c.opt("min")) e.op = Expectation::Op::Min, e.value = v->number(), ++ops;
  if (auto v = c.opt("near")) {
    e.op = Expectation::Op::Near;
    e.value = v->number();
    e.tol = c.at("tol").number();
    ++ops;
  } else if (auto t = c.opt("tol")) {
    t->fail("tol applies to near");
  }
  if (auto v = c.opt("equals")) {
    e.op = Expectation::Op::Equals;
    ++ops;
    if (v->value().is_string()) e.text = v->string(), e.is_text = true;
    else if (v->value().is_boolean()) e.value = v->boolean() ? 1.0 : 0.0;
    else e.value = v->number();
  }
  if (ops != 1) c.fail("expected exactly one of max, min, near, equals");
  if (auto a = c.opt("anchor")) e.anchor = a->string();
  return e;
}

}  // namespace detail

/// Parses and validates configuration text; `digest` covers the exact bytes.
inline RunConfig parse_config(const std::string& text) {
  using detail::Cursor;
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("", std::string("invalid JSON: ") + e.what());
  }
  const Cursor root(j, "");
  root.require_object({"version", "phase_space", "structure", "hamiltonian", "hamiltonians", "observables",
                       "monitors", "cloud", "integrator", "reduction", "sweep", "hodograph", "seed", "output",
                       "expect", "description"});
  RunConfig cfg;
  cfg.digest = fnv1a_hex(text);
  const Cursor ver = root.at("version");
  if (ver.integer() != 1) ver.fail("unsupported version " + ver.value().dump() + " (expected 1)");
  if (auto d = root.opt("description")) d->string();

  if (auto ps = root.opt("phase_space")) {
    ps->require_object({"n"});
    cfg.n = static_cast<int>(ps->at("n").count());
  }
  const PhaseSpace space(cfg.n);
  if (auto s = root.opt("structure")) cfg.structure = detail::read_structure(*s, cfg.n, cfg.filters);

  auto add_hamiltonian = [&](const Cursor& c) {
    Expression h = c.expression();
    detail::check_variables(c, h, space);
    cfg.hamiltonian_sources.push_back(c.value().is_string() ? c.string() : c.value().dump());
    cfg.hamiltonians.push_back(std::move(h));
  };
  if (auto h = root.opt("hamiltonian")) add_hamiltonian(*h);
  if (auto hs = root.opt("hamiltonians")) {
    if (root.has("hamiltonian")) hs->fail("give either hamiltonian or hamiltonians");
    for (const auto& c : hs->array()) add_hamiltonian(c);
    if (cfg.hamiltonians.empty()) hs->fail("expected at least one hamiltonian");
  }
  if (auto obs = root.opt("observables")) {
    for (const auto& c : obs->array()) {
      Expression e = c.expression();
      detail::check_variables(c, e, space);
      cfg.observables.push_back(std::move(e));
    }
  }
  if (auto mons = root.opt("monitors")) {
    if (!mons->value().is_object()) mons->fail("expected object of name: expression");
    for (auto it = mons->value().begin(); it != mons->value().end(); ++it) {
      const Cursor c(it.value(), mons->path() + "/" + it.key());
      Expression e = c.expression();
      detail::check_variables(c, e, space);
      cfg.monitors.push_back({it.key(), std::move(e)});
    }
  }
  auto point = [&](const Cursor& c) {
    auto v = c.numbers(static_cast<std::size_t>(space.dim()));
    for (double x : v)
      if (!std::isfinite(x)) c.fail("non-finite entry");
    return v;
  };
  if (auto c = root.opt("cloud")) {
    c->require_object({"center", "width", "count"});
    CloudConfig cc;
    cc.center = c->has("center") ? point(c->at("center")) : std::vector<double>(space.dim(), 0.0);
    if (auto w = c->opt("width")) cc.width = w->positive();
    if (auto n = c->opt("count")) cc.count = n->count();
    cfg.cloud = cc;
  }
  if (auto c = root.opt("integrator")) {
    c->require_object({"method", "dt", "t_end", "x0"});
    IntegratorConfig ic;
    if (auto m = c->opt("method")) ic.method = detail::read_method(*m);
    if (auto v = c->opt("dt")) ic.dt = v->positive();
    if (auto v = c->opt("t_end")) ic.t_end = v->positive();
    if (ic.dt > ic.t_end) c->at("dt").fail("dt exceeds t_end");
    ic.x0 = point(c->at("x0"));
    cfg.integrator = ic;
  }
  if (auto c = root.opt("reduction")) {
    c->require_object({"reference", "count", "width", "sampler", "n_max", "reduced_t_end", "reduced_dt",
                       "full_epsilon"});
    ReduceConfig rc;
    rc.reference = point(c->at("reference"));
    if (auto v = c->opt("count")) rc.count = v->count();
    if (auto v = c->opt("width")) rc.width = v->positive();
    if (auto v = c->opt("sampler")) {
      rc.sampler = v->string();
      if (rc.sampler != "surface" && rc.sampler != "leaf") v->fail("sampler must be surface or leaf");
    }
    if (auto v = c->opt("n_max")) rc.n_max = static_cast<int>(v->count());
    if (auto v = c->opt("reduced_t_end")) rc.reduced_t_end = v->positive();
    if (auto v = c->opt("reduced_dt")) rc.reduced_dt = v->positive();
    if (auto v = c->opt("full_epsilon")) rc.full_epsilon = v->positive();
    cfg.reduction = rc;
  }
  if (auto c = root.opt("sweep")) {
    c->require_object({"theta", "epsilons"});
    SweepConfig sc;
    if (auto v = c->opt("theta")) {
      sc.theta = v->number();
      if (sc.theta == 0.0) v->fail("theta must be nonzero");
    }
    sc.epsilons = c->at("epsilons").numbers();
    if (sc.epsilons.empty()) c->at("epsilons").fail("expected at least one epsilon");
    for (double e : sc.epsilons)
      if (!(e > 0)) c->at("epsilons").fail("epsilons must be positive");
    cfg.sweep = sc;
  }
  if (auto h = root.opt("hodograph")) cfg.hodograph = detail::read_hodograph(*h);
  if (auto s = root.opt("seed")) {
    if (!s->value().is_number_unsigned()) s->fail("expected unsigned integer");
    cfg.seed = s->value().get<std::uint64_t>();
  }
  if (auto o = root.opt("output")) {
    o->require_object({"directory", "formats"});
    if (auto d = o->opt("directory")) cfg.out_dir = d->string();
    if (auto f = o->opt("formats")) {
      cfg.write_csv = false;
      for (const auto& c : f->array()) {
        const std::string fmt = c.string();
        if (fmt == "csv") cfg.write_csv = true;
        else if (fmt != "json") c.fail("unknown format '" + fmt + "' (expected csv or json)");
      }
    }
  }
  if (auto e = root.opt("expect")) {
    if (!e->value().is_object()) e->fail("expected object of metric: condition");
    for (auto it = e->value().begin(); it != e->value().end(); ++it)
      cfg.expect.push_back(detail::read_expectation(it.key(), Cursor(it.value(), e->path() + "/" + it.key())));
  }
  return cfg;
}

inline RunConfig load_config(const std::filesystem::path& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const std::runtime_error& e) {
    throw ConfigError("", e.what());
  }
  return parse_config(text);
}

}  // namespace poissonred

#endif  // POISSONRED_CONFIG_HPP
