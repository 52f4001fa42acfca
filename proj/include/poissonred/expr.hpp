#ifndef POISSONRED_EXPR_HPP
#define POISSONRED_EXPR_HPP

// Infix expressions over named phase-space variables and parameters.
//
// Expressions are immutable trees shared through shared_ptr<const Node>, so
// copies are cheap and concurrent evaluation is safe.  Derivatives are exact:
// the same evaluator runs over a forward-mode dual number seeded at one
// variable.

#include <cctype>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <memory>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <type_traits>
#include <utility>
#include <vector>

namespace poissonred {

class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& message, std::size_t position)
      : std::runtime_error(message + " at offset " + std::to_string(position)),
        position_(position) {}

  std::size_t position() const noexcept { return position_; }

 private:
  std::size_t position_;
};

/// Raised when an operation leaves its real domain (x/0, log of x<=0, ...).
/// Carries the printed subexpression that failed.
class DomainError : public std::runtime_error {
 public:
  DomainError(const std::string& message, std::string subexpression)
      : std::runtime_error(message + " in " + subexpression),
        subexpression_(std::move(subexpression)) {}

  const std::string& subexpression() const noexcept { return subexpression_; }

 private:
  std::string subexpression_;
};

class UnboundNameError : public std::runtime_error {
 public:
  explicit UnboundNameError(std::string name)
      : std::runtime_error("unbound name '" + name + "'"), name_(std::move(name)) {}

  const std::string& name() const noexcept { return name_; }

 private:
  std::string name_;
};

enum class UnaryOp { Negate, Exp, Log, Sqrt, Sin, Cos };
enum class BinaryOp { Add, Subtract, Multiply, Divide, Power };

namespace detail {

struct Node {
  enum class Kind { Constant, Variable, Parameter, Unary, Binary };

  Kind kind = Kind::Constant;
  double value = 0.0;
  std::string name;
  UnaryOp unary_op = UnaryOp::Negate;
  BinaryOp binary_op = BinaryOp::Add;
  std::shared_ptr<const Node> lhs;
  std::shared_ptr<const Node> rhs;
};

using NodePtr = std::shared_ptr<const Node>;

inline std::string format_number(double v) {
  char buffer[40];
  std::snprintf(buffer, sizeof buffer, "%.17g", v);
  return buffer;
}

inline const char* unary_name(UnaryOp op) {
  switch (op) {
    case UnaryOp::Negate: return "-";
    case UnaryOp::Exp: return "exp";
    case UnaryOp::Log: return "log";
    case UnaryOp::Sqrt: return "sqrt";
    case UnaryOp::Sin: return "sin";
    case UnaryOp::Cos: return "cos";
  }
  return "?";
}

inline char binary_symbol(BinaryOp op) {
  switch (op) {
    case BinaryOp::Add: return '+';
    case BinaryOp::Subtract: return '-';
    case BinaryOp::Multiply: return '*';
    case BinaryOp::Divide: return '/';
    case BinaryOp::Power: return '^';
  }
  return '?';
}

inline void print(const Node& n, std::string& out) {
  switch (n.kind) {
    case Node::Kind::Constant:
      if (n.value < 0 || std::signbit(n.value)) {
        out += "(-";
        out += format_number(-n.value);
        out += ')';
      } else {
        out += format_number(n.value);
      }
      return;
    case Node::Kind::Variable:
    case Node::Kind::Parameter:
      out += n.name;
      return;
    case Node::Kind::Unary:
      if (n.unary_op == UnaryOp::Negate) {
        out += "(-";
        print(*n.lhs, out);
        out += ')';
      } else {
        out += unary_name(n.unary_op);
        out += '(';
        print(*n.lhs, out);
        out += ')';
      }
      return;
    case Node::Kind::Binary:
      out += '(';
      print(*n.lhs, out);
      out += ' ';
      out += binary_symbol(n.binary_op);
      out += ' ';
      print(*n.rhs, out);
      out += ')';
      return;
  }
}

inline std::string print(const Node& n) {
  std::string out;
  print(n, out);
  return out;
}

inline void collect_names(const Node& n, Node::Kind kind, std::set<std::string>& out) {
  if (n.kind == kind) out.insert(n.name);
  if (n.lhs) collect_names(*n.lhs, kind, out);
  if (n.rhs) collect_names(*n.rhs, kind, out);
}

inline bool mentions(const Node& n, std::string_view name) {
  if ((n.kind == Node::Kind::Variable || n.kind == Node::Kind::Parameter) && n.name == name)
    return true;
  return (n.lhs && mentions(*n.lhs, name)) || (n.rhs && mentions(*n.rhs, name));
}

inline bool has_symbols(const Node& n) {
  if (n.kind == Node::Kind::Variable || n.kind == Node::Kind::Parameter) return true;
  return (n.lhs && has_symbols(*n.lhs)) || (n.rhs && has_symbols(*n.rhs));
}

}  // namespace detail

class Expression {
 public:
  Expression() : Expression(constant(0.0)) {}

  static Expression constant(double v) {
    auto n = std::make_shared<detail::Node>();
    n->kind = detail::Node::Kind::Constant;
    n->value = v;
    return Expression(std::move(n));
  }

  static Expression variable(std::string name) {
    auto n = std::make_shared<detail::Node>();
    n->kind = detail::Node::Kind::Variable;
    n->name = std::move(name);
    return Expression(std::move(n));
  }

  static Expression parameter(std::string name) {
    auto n = std::make_shared<detail::Node>();
    n->kind = detail::Node::Kind::Parameter;
    n->name = std::move(name);
    return Expression(std::move(n));
  }

  static Expression unary(UnaryOp op, const Expression& arg) {
    auto n = std::make_shared<detail::Node>();
    n->kind = detail::Node::Kind::Unary;
    n->unary_op = op;
    n->lhs = arg.root_;
    return Expression(std::move(n));
  }

  static Expression binary(BinaryOp op, const Expression& lhs, const Expression& rhs) {
    auto n = std::make_shared<detail::Node>();
    n->kind = detail::Node::Kind::Binary;
    n->binary_op = op;
    n->lhs = lhs.root_;
    n->rhs = rhs.root_;
    return Expression(std::move(n));
  }

  explicit Expression(detail::NodePtr root) : root_(std::move(root)) {}

  const detail::Node& node() const noexcept { return *root_; }
  const detail::NodePtr& root() const noexcept { return root_; }

  /// True when the tree mentions no variable or parameter.
  bool is_constant() const { return !detail::has_symbols(*root_); }

  bool depends_on(std::string_view name) const { return detail::mentions(*root_, name); }

  std::set<std::string> variables() const {
    std::set<std::string> out;
    detail::collect_names(*root_, detail::Node::Kind::Variable, out);
    return out;
  }

  std::set<std::string> parameters() const {
    std::set<std::string> out;
    detail::collect_names(*root_, detail::Node::Kind::Parameter, out);
    return out;
  }

  /// Fully parenthesised text that parses back to an equal-valued tree.
  std::string str() const { return detail::print(*root_); }

 private:
  detail::NodePtr root_;
};

inline Expression operator+(const Expression& a, const Expression& b) {
  return Expression::binary(BinaryOp::Add, a, b);
}
inline Expression operator-(const Expression& a, const Expression& b) {
  return Expression::binary(BinaryOp::Subtract, a, b);
}
inline Expression operator*(const Expression& a, const Expression& b) {
  return Expression::binary(BinaryOp::Multiply, a, b);
}
inline Expression operator/(const Expression& a, const Expression& b) {
  return Expression::binary(BinaryOp::Divide, a, b);
}
inline Expression operator-(const Expression& a) { return Expression::unary(UnaryOp::Negate, a); }

// ---------------------------------------------------------------------------
// Bindings

/// Ordered variable bindings plus named parameters.  Variable order fixes the
/// flat index used by gradient().
class Bindings {
 public:
  Bindings& set_variable(std::string name, double value) {
    for (std::size_t i = 0; i < names_.size(); ++i) {
      if (names_[i] == name) {
        values_[i] = value;
        return *this;
      }
    }
    names_.push_back(std::move(name));
    values_.push_back(value);
    return *this;
  }

  Bindings& set_parameter(std::string name, double value) {
    parameters_[std::move(name)] = value;
    return *this;
  }

  const double* find_variable(std::string_view name) const {
    for (std::size_t i = 0; i < names_.size(); ++i)
      if (names_[i] == name) return &values_[i];
    return nullptr;
  }

  const double* find_parameter(std::string_view name) const {
    auto it = parameters_.find(name);
    return it == parameters_.end() ? nullptr : &it->second;
  }

  std::span<const std::string> variable_names() const { return names_; }
  std::span<const double> variable_values() const { return values_; }
  std::size_t size() const { return names_.size(); }

 private:
  std::vector<std::string> names_;
  std::vector<double> values_;
  std::map<std::string, double, std::less<>> parameters_;
};

// ---------------------------------------------------------------------------
// Evaluation

/// Forward-mode dual number: value plus derivative along one seed direction.
struct Dual {
  double value = 0.0;
  double slope = 0.0;
};

namespace detail {

template <class Scalar>
struct ScalarOps;

template <>
struct ScalarOps<double> {
  static double make(double v, bool) { return v; }
  static double value(double v) { return v; }
};

template <>
struct ScalarOps<Dual> {
  static Dual make(double v, bool seeded) { return {v, seeded ? 1.0 : 0.0}; }
  static double value(const Dual& d) { return d.value; }
};

// Chain rule with the convention that a zero input slope stays zero, so an
// infinite local derivative never turns 0 into NaN.
inline Dual chain(double value, double local_derivative, double slope) {
  return {value, slope == 0.0 ? 0.0 : local_derivative * slope};
}

inline bool is_integer(double v) { return std::isfinite(v) && std::floor(v) == v; }

template <class Scalar>
Scalar evaluate(const Node& n, const Bindings& b, std::string_view seed) {
  using Ops = ScalarOps<Scalar>;
  switch (n.kind) {
    case Node::Kind::Constant:
      return Ops::make(n.value, false);
    case Node::Kind::Variable: {
      const double* v = b.find_variable(n.name);
      if (!v) throw UnboundNameError(n.name);
      return Ops::make(*v, n.name == seed);
    }
    case Node::Kind::Parameter: {
      const double* v = b.find_parameter(n.name);
      if (!v) throw UnboundNameError(n.name);
      return Ops::make(*v, false);
    }
    case Node::Kind::Unary: {
      const Scalar a = evaluate<Scalar>(*n.lhs, b, seed);
      const double x = Ops::value(a);
      switch (n.unary_op) {
        case UnaryOp::Negate:
          if constexpr (std::is_same_v<Scalar, double>) return -a;
          else return Dual{-a.value, -a.slope};
        case UnaryOp::Exp: {
          const double e = std::exp(x);
          if constexpr (std::is_same_v<Scalar, double>) return e;
          else return chain(e, e, a.slope);
        }
        case UnaryOp::Log:
          if (!(x > 0.0)) throw DomainError("log of non-positive value", print(n));
          if constexpr (std::is_same_v<Scalar, double>) return std::log(x);
          else return chain(std::log(x), 1.0 / x, a.slope);
        case UnaryOp::Sqrt: {
          if (x < 0.0) throw DomainError("sqrt of negative value", print(n));
          const double r = std::sqrt(x);
          if constexpr (std::is_same_v<Scalar, double>) return r;
          else return chain(r, 0.5 / r, a.slope);
        }
        case UnaryOp::Sin:
          if constexpr (std::is_same_v<Scalar, double>) return std::sin(x);
          else return chain(std::sin(x), std::cos(x), a.slope);
        case UnaryOp::Cos:
          if constexpr (std::is_same_v<Scalar, double>) return std::cos(x);
          else return chain(std::cos(x), -std::sin(x), a.slope);
      }
      break;
    }
    case Node::Kind::Binary: {
      const Scalar l = evaluate<Scalar>(*n.lhs, b, seed);
      const Scalar r = evaluate<Scalar>(*n.rhs, b, seed);
      const double lv = Ops::value(l);
      const double rv = Ops::value(r);
      switch (n.binary_op) {
        case BinaryOp::Add:
          if constexpr (std::is_same_v<Scalar, double>) return l + r;
          else return Dual{l.value + r.value, l.slope + r.slope};
        case BinaryOp::Subtract:
          if constexpr (std::is_same_v<Scalar, double>) return l - r;
          else return Dual{l.value - r.value, l.slope - r.slope};
        case BinaryOp::Multiply:
          if constexpr (std::is_same_v<Scalar, double>) return l * r;
          else return Dual{l.value * r.value, l.slope * r.value + l.value * r.slope};
        case BinaryOp::Divide:
          if (rv == 0.0) throw DomainError("division by zero", print(n));
          if constexpr (std::is_same_v<Scalar, double>) {
            return l / r;
          } else {
            const double q = l.value / r.value;
            return Dual{q, (l.slope - q * r.slope) / r.value};
          }
        case BinaryOp::Power: {
          if (lv < 0.0 && !is_integer(rv))
            throw DomainError("negative base with non-integer exponent", print(n));
          if (lv == 0.0 && rv < 0.0) throw DomainError("zero base with negative exponent", print(n));
          const double p = std::pow(lv, rv);
          if constexpr (std::is_same_v<Scalar, double>) {
            return p;
          } else {
            double slope = 0.0;
            if (l.slope != 0.0) slope += rv * std::pow(lv, rv - 1.0) * l.slope;
            if (r.slope != 0.0) {
              if (!(lv > 0.0))
                throw DomainError("variable exponent needs a positive base", print(n));
              slope += p * std::log(lv) * r.slope;
            }
            return Dual{p, slope};
          }
        }
      }
      break;
    }
  }
  throw std::logic_error("malformed expression node");
}

}  // namespace detail

/// IEEE double value of `e` at `b`.  Unbound names throw UnboundNameError;
/// leaving the real domain throws DomainError.
inline double eval(const Expression& e, const Bindings& b) {
  return detail::evaluate<double>(e.node(), b, {});
}

inline Dual eval_dual(const Expression& e, const Bindings& b, std::string_view var) {
  return detail::evaluate<Dual>(e.node(), b, var);
}

/// Exact partial derivative d e / d var at `b`.  `var` must be bound.
inline double derivative(const Expression& e, std::string_view var, const Bindings& b) {
  if (!b.find_variable(var)) throw UnboundNameError(std::string(var));
  if (!e.depends_on(var)) {
    eval(e, b);  // surface domain errors consistently with eval
    return 0.0;
  }
  return eval_dual(e, b, var).slope;
}

/// Gradient over the bound variables, in binding order.
inline std::vector<double> gradient(const Expression& e, const Bindings& b) {
  const auto names = b.variable_names();
  std::vector<double> g(names.size(), 0.0);
  bool evaluated = false;
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (!e.depends_on(names[i])) continue;
    g[i] = eval_dual(e, b, names[i]).slope;
    evaluated = true;
  }
  if (!evaluated) eval(e, b);
  return g;
}

// ---------------------------------------------------------------------------
// Rewriting

namespace detail {

inline NodePtr substitute(const NodePtr& n,
                          const std::map<std::string, Expression, std::less<>>& replacements) {
  if (n->kind == Node::Kind::Variable || n->kind == Node::Kind::Parameter) {
    auto it = replacements.find(n->name);
    return it == replacements.end() ? n : it->second.root();
  }
  if (n->kind == Node::Kind::Constant) return n;
  NodePtr lhs = n->lhs ? substitute(n->lhs, replacements) : nullptr;
  NodePtr rhs = n->rhs ? substitute(n->rhs, replacements) : nullptr;
  if (lhs == n->lhs && rhs == n->rhs) return n;
  auto copy = std::make_shared<Node>(*n);
  copy->lhs = std::move(lhs);
  copy->rhs = std::move(rhs);
  return copy;
}

inline NodePtr fold(const NodePtr& n) {
  if (n->kind != Node::Kind::Unary && n->kind != Node::Kind::Binary) return n;
  NodePtr lhs = fold(n->lhs);
  NodePtr rhs = n->rhs ? fold(n->rhs) : nullptr;
  const bool constant_args = lhs->kind == Node::Kind::Constant &&
                             (!rhs || rhs->kind == Node::Kind::Constant);
  auto copy = std::make_shared<Node>(*n);
  copy->lhs = lhs;
  copy->rhs = rhs;
  if (constant_args) {
    try {
      auto c = std::make_shared<Node>();
      c->kind = Node::Kind::Constant;
      c->value = evaluate<double>(*copy, Bindings{}, {});
      if (std::isfinite(c->value)) return c;
    } catch (const DomainError&) {
      // keep the unfolded node so evaluation reports the failing subexpression
    }
  }
  return copy;
}

}  // namespace detail

/// Replaces every variable or parameter whose name is a key of `replacements`.
inline Expression substitute(const Expression& e,
                             const std::map<std::string, Expression, std::less<>>& replacements) {
  return Expression(detail::substitute(e.root(), replacements));
}

/// Evaluates constant subtrees.  Subtrees that would raise a DomainError are
/// left in place.
inline Expression fold_constants(const Expression& e) { return Expression(detail::fold(e.root())); }

/// Replaces parameters by numeric constants and folds the result.
inline Expression bind_parameters(const Expression& e,
                                  const std::map<std::string, double, std::less<>>& values) {
  std::map<std::string, Expression, std::less<>> replacements;
  for (const auto& name : e.parameters()) {
    auto it = values.find(name);
    if (it != values.end()) replacements.emplace(name, Expression::constant(it->second));
  }
  return fold_constants(substitute(e, replacements));
}

// ---------------------------------------------------------------------------
// Parsing
//
//   expr   := term (('+'|'-') term)*
//   term   := unary (('*'|'/') unary)*
//   unary  := ('-'|'+') unary | power
//   power  := base ('^' unary)?
//   base   := number | name | '(' expr ')' | func '(' expr ')'
//   func   := exp | log | sqrt | sin | cos

/// Phase-space names q1..qn, p1..pn are always variables.
inline bool is_phase_space_name(std::string_view name) {
  if (name.size() < 2 || (name[0] != 'q' && name[0] != 'p')) return false;
  if (name[1] == '0') return false;
  for (std::size_t i = 1; i < name.size(); ++i)
    if (!std::isdigit(static_cast<unsigned char>(name[i]))) return false;
  return true;
}

namespace detail {

class Parser {
 public:
  Parser(std::string_view source, const std::vector<std::string>& extra_variables)
      : src_(source), extra_(extra_variables) {}

  Expression parse() {
    Expression e = expression();
    skip_space();
    if (pos_ != src_.size()) fail(std::string("unexpected '") + src_[pos_] + "'");
    return e;
  }

 private:
  [[noreturn]] void fail(const std::string& message) const { throw ParseError(message, pos_); }

  void skip_space() {
    while (pos_ < src_.size() && std::isspace(static_cast<unsigned char>(src_[pos_]))) ++pos_;
  }

  bool accept(char c) {
    skip_space();
    if (pos_ < src_.size() && src_[pos_] == c) {
      ++pos_;
      return true;
    }
    return false;
  }

  Expression expression() {
    Expression e = term();
    for (;;) {
      if (accept('+')) e = e + term();
      else if (accept('-')) e = e - term();
      else return e;
    }
  }

  Expression term() {
    Expression e = unary();
    for (;;) {
      if (accept('*')) e = e * unary();
      else if (accept('/')) e = e / unary();
      else return e;
    }
  }

  Expression unary() {
    if (accept('-')) return -unary();
    if (accept('+')) return unary();
    return power();
  }

  Expression power() {
    Expression b = base();
    if (accept('^')) return Expression::binary(BinaryOp::Power, b, unary());
    return b;
  }

  Expression base() {
    skip_space();
    if (pos_ >= src_.size()) fail("unexpected end of input");
    const char c = src_[pos_];
    if (c == '(') {
      ++pos_;
      Expression e = expression();
      if (!accept(')')) fail("expected ')'");
      return e;
    }
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') return number();
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') return name_or_call();
    fail(std::string("unexpected '") + c + "'");
  }

  Expression number() {
    const std::size_t start = pos_;
    auto digits = [&] {
      std::size_t n = 0;
      while (pos_ < src_.size() && std::isdigit(static_cast<unsigned char>(src_[pos_]))) {
        ++pos_;
        ++n;
      }
      return n;
    };
    std::size_t mantissa = digits();
    if (pos_ < src_.size() && src_[pos_] == '.') {
      ++pos_;
      mantissa += digits();
    }
    if (mantissa == 0) {
      pos_ = start;
      fail("malformed number");
    }
    if (pos_ < src_.size() && (src_[pos_] == 'e' || src_[pos_] == 'E')) {
      const std::size_t mark = pos_;
      ++pos_;
      if (pos_ < src_.size() && (src_[pos_] == '+' || src_[pos_] == '-')) ++pos_;
      if (digits() == 0) {
        pos_ = mark;
        fail("malformed exponent");
      }
    }
    const std::string text(src_.substr(start, pos_ - start));
    return Expression::constant(std::strtod(text.c_str(), nullptr));
  }

  Expression name_or_call() {
    const std::size_t start = pos_;
    while (pos_ < src_.size() &&
           (std::isalnum(static_cast<unsigned char>(src_[pos_])) || src_[pos_] == '_'))
      ++pos_;
    const std::string name(src_.substr(start, pos_ - start));

    static const std::pair<const char*, UnaryOp> functions[] = {
        {"exp", UnaryOp::Exp}, {"log", UnaryOp::Log}, {"sqrt", UnaryOp::Sqrt},
        {"sin", UnaryOp::Sin}, {"cos", UnaryOp::Cos}};

    skip_space();
    const bool call = pos_ < src_.size() && src_[pos_] == '(';
    for (const auto& [fname, op] : functions) {
      if (name == fname) {
        if (!call) fail("expected '(' after function '" + name + "'");
        ++pos_;
        Expression arg = expression();
        if (!accept(')')) fail("expected ')'");
        return Expression::unary(op, arg);
      }
    }
    if (call) {
      pos_ = start;
      fail("unknown function '" + name + "'");
    }
    if (is_phase_space_name(name)) return Expression::variable(name);
    for (const auto& v : extra_)
      if (v == name) return Expression::variable(name);
    return Expression::parameter(name);
  }

  std::string_view src_;
  const std::vector<std::string>& extra_;
  std::size_t pos_ = 0;
};

}  // namespace detail

/// Parses infix text.  q<k>/p<k> names and any name in `extra_variables`
/// become variables; every other name is a parameter.
inline Expression parse(std::string_view source, const std::vector<std::string>& extra_variables = {}) {
  return detail::Parser(source, extra_variables).parse();
}

}  // namespace poissonred

#endif  // POISSONRED_EXPR_HPP
