// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace traceaudit {

/// A value from the Pythonic literal subset that appears in step payloads:
/// int, float, str, bool, None, and (possibly nested) tuples and lists.
class LiteralValue {
 public:
  enum class Kind { Integer, Real, String, Boolean, None, Tuple, List };

  LiteralValue() = default;  // None

  static LiteralValue integer(std::int64_t v);
  static LiteralValue real(double v);
  static LiteralValue string(std::string v);
  static LiteralValue boolean(bool v);
  static LiteralValue none();
  static LiteralValue tuple(std::vector<LiteralValue> items);
  static LiteralValue list(std::vector<LiteralValue> items);

  Kind kind() const noexcept { return kind_; }
  bool is_number() const noexcept { return kind_ == Kind::Integer || kind_ == Kind::Real; }
  bool is_collection() const noexcept { return kind_ == Kind::Tuple || kind_ == Kind::List; }

  std::int64_t as_integer() const;
  /// Numeric value of an Integer or Real.
  double as_number() const;
  const std::string& as_string() const;
  bool as_boolean() const;
  const std::vector<LiteralValue>& items() const;

  /// Python-style rendering; `parse_literal(render())` yields an equal value.
  std::string render() const;

  friend bool operator==(const LiteralValue& a, const LiteralValue& b);

 private:
  Kind kind_ = Kind::None;
  std::int64_t int_ = 0;
  double real_ = 0.0;
  bool bool_ = false;
  std::string str_;
  std::vector<LiteralValue> items_;
};

const char* to_string(LiteralValue::Kind kind);

/// Parses a complete literal. Surrounding whitespace is allowed.
/// Throws ParseError (with byte offset) for anything outside the subset,
/// including dicts and sets.
LiteralValue parse_literal(std::string_view text);

/// Like parse_literal but returns nullopt instead of throwing.
std::optional<LiteralValue> try_parse_literal(std::string_view text);

/// Splits `text` at commas that are outside brackets and quotes.
/// A trailing empty piece (from a trailing comma) is dropped.
std::vector<std::string_view> split_top_level(std::string_view text);

/// Python-style repr of a string (single quotes unless the text holds one).
std::string quote_python_string(std::string_view s);

/// Shortest decimal that round-trips through strtod, always carrying a '.'
/// or exponent so it re-reads as a float.
std::string format_real(double v);

}  // namespace traceaudit
