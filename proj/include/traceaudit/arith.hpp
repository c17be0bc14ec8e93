// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace traceaudit::arith {

/// Arithmetic AST for the equation strings that appear in step payloads.
/// Parentheses are not kept as nodes; render() reinserts the ones the
/// precedence rules need.
struct Expression {
  enum class Kind { Number, Identifier, Negate, Add, Subtract, Multiply, Divide, Power };

  Kind kind = Kind::Number;
  double value = 0.0;
  std::string name;
  std::vector<Expression> operands;

  static Expression number(double v);
  static Expression identifier(std::string name);
  static Expression negate(Expression operand);
  static Expression binary(Kind op, Expression lhs, Expression rhs);

  bool is_binary() const noexcept;
  std::string render() const;

  bool operator==(const Expression&) const = default;
};

struct Equation {
  std::string lhs;
  Expression rhs;
};

using Bindings = std::map<std::string, double, std::less<>>;

/// Removes thousands separators ("1,000" -> "1000").
std::string normalize_numbers(std::string_view text);

/// Precedence: ** > unary minus > * / > + -; ** is right-associative.
/// Throws ParseError with the byte offset of the offending token.
Expression parse_expression(std::string_view text);

/// Parses "IDENT = EXPR". Throws ParseError.
Equation parse_equation(std::string_view text);

/// IEEE double evaluation. Throws UnboundIdentifier or DivisionByZero.
double evaluate(const Expression& expr, const Bindings& bindings = {});

/// Collects identifiers in first-occurrence order.
std::vector<std::string> free_identifiers(const Expression& expr);

enum class TriState { Consistent, Inconsistent, NotApplicable };

const char* to_string(TriState t);

constexpr double kDefaultRelTol = 1e-6;

/// Compares the right-hand sides of two equations. Not applicable when either
/// side fails to parse or cannot be evaluated without bindings.
TriState check_equation_step(std::string_view before, std::string_view after,
                             double rel_tol = kDefaultRelTol);

enum class ChainMode { AdjacentPairs, FirstToLast };

/// A before/after equation pair taken from one simplification step.
struct EquationPair {
  std::string before;
  std::string after;
};

/// Adjacent mode checks every pair and is consistent when at least one pair is
/// checkable and none is inconsistent. First-to-last compares the first
/// pair's input with the last pair's output.
TriState check_equation_chain(const std::vector<EquationPair>& pairs, ChainMode mode,
                              double rel_tol = kDefaultRelTol);

}  // namespace traceaudit::arith
