// SPDX-License-Identifier: Apache-2.0
#include "traceaudit/arith.hpp"

#include <charconv>
#include <cmath>
#include <set>
#include <utility>

#include "traceaudit/errors.hpp"
#include "traceaudit/literal.hpp"

namespace traceaudit::arith {

Expression Expression::number(double v) {
  Expression e;
  e.kind = Kind::Number;
  e.value = v;
  return e;
}

Expression Expression::identifier(std::string name) {
  Expression e;
  e.kind = Kind::Identifier;
  e.name = std::move(name);
  return e;
}

Expression Expression::negate(Expression operand) {
  Expression e;
  e.kind = Kind::Negate;
  e.operands.push_back(std::move(operand));
  return e;
}

Expression Expression::binary(Kind op, Expression lhs, Expression rhs) {
  Expression e;
  e.kind = op;
  e.operands.push_back(std::move(lhs));
  e.operands.push_back(std::move(rhs));
  return e;
}

bool Expression::is_binary() const noexcept {
  return kind == Kind::Add || kind == Kind::Subtract || kind == Kind::Multiply ||
         kind == Kind::Divide || kind == Kind::Power;
}

namespace {

int precedence(Expression::Kind k) {
  switch (k) {
    case Expression::Kind::Add:
    case Expression::Kind::Subtract: return 1;
    case Expression::Kind::Multiply:
    case Expression::Kind::Divide: return 2;
    case Expression::Kind::Negate: return 3;
    case Expression::Kind::Power: return 4;
    default: return 5;
  }
}

const char* op_symbol(Expression::Kind k) {
  switch (k) {
    case Expression::Kind::Add: return " + ";
    case Expression::Kind::Subtract: return " - ";
    case Expression::Kind::Multiply: return " * ";
    case Expression::Kind::Divide: return " / ";
    case Expression::Kind::Power: return " ** ";
    default: return "?";
  }
}

std::string wrap(const Expression& e, bool parens) {
  return parens ? "(" + e.render() + ")" : e.render();
}

}  // namespace

std::string Expression::render() const {
  switch (kind) {
    case Kind::Number: {
      std::string s = format_real(value);
      if (s.size() > 2 && s.compare(s.size() - 2, 2, ".0") == 0) s.resize(s.size() - 2);
      return value < 0 ? "(" + s + ")" : s;
    }
    case Kind::Identifier: return name;
    case Kind::Negate: return "-" + wrap(operands[0], precedence(operands[0].kind) < 3);
    case Kind::Power:
      return wrap(operands[0], precedence(operands[0].kind) < 5) + op_symbol(kind) +
             wrap(operands[1], precedence(operands[1].kind) < 3);
    default: {
      const int p = precedence(kind);
      return wrap(operands[0], precedence(operands[0].kind) < p) + op_symbol(kind) +
             wrap(operands[1], precedence(operands[1].kind) <= p);
    }
  }
}

namespace {

bool digit_at(std::string_view s, std::size_t i) { return i < s.size() && s[i] >= '0' && s[i] <= '9'; }

/// True when s[i] is a ',' grouping exactly three digits after a digit.
bool thousands_separator_at(std::string_view s, std::size_t i) {
  return i > 0 && i < s.size() && s[i] == ',' && digit_at(s, i - 1) && digit_at(s, i + 1) &&
         digit_at(s, i + 2) && digit_at(s, i + 3) && !digit_at(s, i + 4);
}

}  // namespace

std::string normalize_numbers(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  for (std::size_t i = 0; i < text.size(); ++i) {
    if (!thousands_separator_at(text, i)) out += text[i];
  }
  return out;
}

namespace {

enum class Tok { Number, Ident, Plus, Minus, Star, Slash, StarStar, LParen, RParen, End };

struct Token {
  Tok kind;
  std::size_t offset;
  double value = 0.0;
  std::string text;
};

bool is_digit(char c) { return c >= '0' && c <= '9'; }
bool ident_start(char c) { return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c == '_'; }

std::vector<Token> tokenize(std::string_view text, std::size_t base) {
  std::vector<Token> toks;
  std::size_t i = 0;
  while (i < text.size()) {
    const char c = text[i];
    if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
      ++i;
      continue;
    }
    const std::size_t at = base + i;
    if (is_digit(c) || (c == '.' && i + 1 < text.size() && is_digit(text[i + 1]))) {
      std::string digits;
      while (i < text.size() && is_digit(text[i])) {
        digits += text[i++];
        if (thousands_separator_at(text, i)) ++i;
      }
      if (i < text.size() && text[i] == '.') {
        digits += text[i++];
        while (i < text.size() && is_digit(text[i])) digits += text[i++];
      }
      if (i < text.size() && (text[i] == 'e' || text[i] == 'E')) {
        std::size_t j = i + 1;
        if (j < text.size() && (text[j] == '+' || text[j] == '-')) ++j;
        if (j < text.size() && is_digit(text[j])) {
          digits += 'e';
          digits.append(text.substr(i + 1, j - i - 1));
          i = j;
          while (i < text.size() && is_digit(text[i])) digits += text[i++];
        }
      }
      double v = 0.0;
      auto res = std::from_chars(digits.data(), digits.data() + digits.size(), v);
      if (res.ec == std::errc::result_out_of_range) {
        v = std::strtod(digits.c_str(), nullptr);
      } else if (res.ec != std::errc{}) {
        throw ParseError("malformed number", at);
      }
      toks.push_back({Tok::Number, at, v, digits});
      continue;
    }
    if (ident_start(c)) {
      std::size_t j = i;
      while (j < text.size() && (ident_start(text[j]) || is_digit(text[j]))) ++j;
      toks.push_back({Tok::Ident, at, 0.0, std::string(text.substr(i, j - i))});
      i = j;
      continue;
    }
    switch (c) {
      case '+': toks.push_back({Tok::Plus, at, 0.0, {}}); break;
      case '-': toks.push_back({Tok::Minus, at, 0.0, {}}); break;
      case '/': toks.push_back({Tok::Slash, at, 0.0, {}}); break;
      case '(': toks.push_back({Tok::LParen, at, 0.0, {}}); break;
      case ')': toks.push_back({Tok::RParen, at, 0.0, {}}); break;
      case '*':
        if (i + 1 < text.size() && text[i + 1] == '*') {
          toks.push_back({Tok::StarStar, at, 0.0, {}});
          ++i;
        } else {
          toks.push_back({Tok::Star, at, 0.0, {}});
        }
        break;
      default: throw ParseError(std::string("illegal character '") + c + "'", at);
    }
    ++i;
  }
  toks.push_back({Tok::End, base + text.size(), 0.0, {}});
  return toks;
}

class ExprParser {
 public:
  explicit ExprParser(std::vector<Token> toks) : toks_(std::move(toks)) {}

  Expression parse() {
    Expression e = parse_sum();
    if (peek().kind != Tok::End) throw ParseError("unexpected token", peek().offset);
    return e;
  }

 private:
  static constexpr int kMaxDepth = 512;

  const Token& peek() const { return toks_[pos_]; }
  const Token& next() { return toks_[pos_++]; }

  struct DepthGuard {
    explicit DepthGuard(ExprParser& p) : p(p) {
      if (++p.depth_ > kMaxDepth) throw ParseError("expression nested too deeply", p.peek().offset);
    }
    ~DepthGuard() { --p.depth_; }
    ExprParser& p;
  };

  Expression parse_sum() {
    Expression lhs = parse_product();
    while (peek().kind == Tok::Plus || peek().kind == Tok::Minus) {
      auto op = next().kind == Tok::Plus ? Expression::Kind::Add : Expression::Kind::Subtract;
      lhs = Expression::binary(op, std::move(lhs), parse_product());
    }
    return lhs;
  }

  Expression parse_product() {
    Expression lhs = parse_unary();
    while (peek().kind == Tok::Star || peek().kind == Tok::Slash) {
      auto op = next().kind == Tok::Star ? Expression::Kind::Multiply : Expression::Kind::Divide;
      lhs = Expression::binary(op, std::move(lhs), parse_unary());
    }
    return lhs;
  }

  Expression parse_unary() {
    DepthGuard guard(*this);
    if (peek().kind == Tok::Minus) {
      next();
      return Expression::negate(parse_unary());
    }
    if (peek().kind == Tok::Plus) {
      next();
      return parse_unary();
    }
    return parse_power();
  }

  Expression parse_power() {
    Expression base = parse_primary();
    if (peek().kind == Tok::StarStar) {
      next();
      return Expression::binary(Expression::Kind::Power, std::move(base), parse_unary());
    }
    return base;
  }

  Expression parse_primary() {
    const Token& t = peek();
    switch (t.kind) {
      case Tok::Number: next(); return Expression::number(t.value);
      case Tok::Ident: next(); return Expression::identifier(t.text);
      case Tok::LParen: {
        next();
        DepthGuard guard(*this);
        Expression inner = parse_sum();
        if (peek().kind != Tok::RParen) throw ParseError("expected ')'", peek().offset);
        next();
        return inner;
      }
      case Tok::End: throw ParseError("unexpected end of expression", t.offset);
      default: throw ParseError("unexpected token", t.offset);
    }
  }

  std::vector<Token> toks_;
  std::size_t pos_ = 0;
  int depth_ = 0;
};

Expression parse_at(std::string_view text, std::size_t base) {
  return ExprParser(tokenize(text, base)).parse();
}

void collect_identifiers(const Expression& e, std::vector<std::string>& out, std::set<std::string>& seen) {
  if (e.kind == Expression::Kind::Identifier && seen.insert(e.name).second) out.push_back(e.name);
  for (const auto& op : e.operands) collect_identifiers(op, out, seen);
}

}  // namespace

Expression parse_expression(std::string_view text) { return parse_at(text, 0); }

Equation parse_equation(std::string_view text) {
  const auto eq = text.find('=');
  if (eq == std::string_view::npos) throw ParseError("expected '='", text.size());
  if (text.find('=', eq + 1) != std::string_view::npos) {
    throw ParseError("more than one '='", text.find('=', eq + 1));
  }
  std::string_view lhs = text.substr(0, eq);
  const auto b = lhs.find_first_not_of(" \t\r\n");
  const auto e = lhs.find_last_not_of(" \t\r\n");
  if (b == std::string_view::npos) throw ParseError("missing left-hand side", 0);
  std::string name(lhs.substr(b, e - b + 1));
  const bool ident = ident_start(name[0]) &&
                     name.find_first_not_of("abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789_") ==
                         std::string::npos;
  if (!ident) throw ParseError("left-hand side is not an identifier", b);
  return Equation{std::move(name), parse_at(text.substr(eq + 1), eq + 1)};
}

double evaluate(const Expression& expr, const Bindings& bindings) {
  using K = Expression::Kind;
  switch (expr.kind) {
    case K::Number: return expr.value;
    case K::Identifier: {
      auto it = bindings.find(expr.name);
      if (it == bindings.end()) throw UnboundIdentifier(expr.name);
      return it->second;
    }
    case K::Negate: return -evaluate(expr.operands[0], bindings);
    default: break;
  }
  const double a = evaluate(expr.operands[0], bindings);
  const double b = evaluate(expr.operands[1], bindings);
  switch (expr.kind) {
    case K::Add: return a + b;
    case K::Subtract: return a - b;
    case K::Multiply: return a * b;
    case K::Divide:
      if (b == 0.0) throw DivisionByZero();
      return a / b;
    case K::Power:
      if (a == 0.0 && b < 0.0) throw DivisionByZero();
      return std::pow(a, b);
    default: return 0.0;
  }
}

std::vector<std::string> free_identifiers(const Expression& expr) {
  std::vector<std::string> out;
  std::set<std::string> seen;
  collect_identifiers(expr, out, seen);
  return out;
}

const char* to_string(TriState t) {
  switch (t) {
    case TriState::Consistent: return "consistent";
    case TriState::Inconsistent: return "inconsistent";
    case TriState::NotApplicable: return "not_applicable";
  }
  return "?";
}

namespace {

std::optional<double> evaluate_rhs(std::string_view equation) {
  try {
    const double v = evaluate(parse_equation(equation).rhs);
    if (std::isnan(v)) return std::nullopt;
    return v;
  } catch (const Error&) {
    return std::nullopt;
  }
}

}  // namespace

TriState check_equation_step(std::string_view before, std::string_view after, double rel_tol) {
  const auto a = evaluate_rhs(before);
  const auto b = evaluate_rhs(after);
  if (!a || !b) return TriState::NotApplicable;
  const double scale = std::max(1.0, std::fabs(*a));
  return std::fabs(*a - *b) <= rel_tol * scale ? TriState::Consistent : TriState::Inconsistent;
}

TriState check_equation_chain(const std::vector<EquationPair>& pairs, ChainMode mode, double rel_tol) {
  if (pairs.empty()) return TriState::NotApplicable;
  if (mode == ChainMode::FirstToLast) {
    return check_equation_step(pairs.front().before, pairs.back().after, rel_tol);
  }
  bool any_checked = false;
  for (const auto& p : pairs) {
    const auto t = check_equation_step(p.before, p.after, rel_tol);
    if (t == TriState::Inconsistent) return t;
    if (t == TriState::Consistent) any_checked = true;
  }
  return any_checked ? TriState::Consistent : TriState::NotApplicable;
}

}  // namespace traceaudit::arith
