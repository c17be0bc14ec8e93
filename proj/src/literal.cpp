// SPDX-License-Identifier: Apache-2.0
#include "traceaudit/literal.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <limits>
#include <stdexcept>
#include <utility>

#include "traceaudit/errors.hpp"

namespace traceaudit {

LiteralValue LiteralValue::integer(std::int64_t v) {
  LiteralValue out;
  out.kind_ = Kind::Integer;
  out.int_ = v;
  return out;
}

LiteralValue LiteralValue::real(double v) {
  LiteralValue out;
  out.kind_ = Kind::Real;
  out.real_ = v;
  return out;
}

LiteralValue LiteralValue::string(std::string v) {
  LiteralValue out;
  out.kind_ = Kind::String;
  out.str_ = std::move(v);
  return out;
}

LiteralValue LiteralValue::boolean(bool v) {
  LiteralValue out;
  out.kind_ = Kind::Boolean;
  out.bool_ = v;
  return out;
}

LiteralValue LiteralValue::none() { return LiteralValue{}; }

LiteralValue LiteralValue::tuple(std::vector<LiteralValue> items) {
  LiteralValue out;
  out.kind_ = Kind::Tuple;
  out.items_ = std::move(items);
  return out;
}

LiteralValue LiteralValue::list(std::vector<LiteralValue> items) {
  LiteralValue out;
  out.kind_ = Kind::List;
  out.items_ = std::move(items);
  return out;
}

std::int64_t LiteralValue::as_integer() const {
  if (kind_ != Kind::Integer) throw std::logic_error("literal is not an integer");
  return int_;
}

double LiteralValue::as_number() const {
  if (kind_ == Kind::Integer) return static_cast<double>(int_);
  if (kind_ == Kind::Real) return real_;
  throw std::logic_error("literal is not a number");
}

const std::string& LiteralValue::as_string() const {
  if (kind_ != Kind::String) throw std::logic_error("literal is not a string");
  return str_;
}

bool LiteralValue::as_boolean() const {
  if (kind_ != Kind::Boolean) throw std::logic_error("literal is not a boolean");
  return bool_;
}

const std::vector<LiteralValue>& LiteralValue::items() const {
  if (!is_collection()) throw std::logic_error("literal is not a tuple or list");
  return items_;
}

bool operator==(const LiteralValue& a, const LiteralValue& b) {
  if (a.kind_ != b.kind_) return false;
  switch (a.kind_) {
    case LiteralValue::Kind::Integer: return a.int_ == b.int_;
    case LiteralValue::Kind::Real:
      return a.real_ == b.real_ || (std::isnan(a.real_) && std::isnan(b.real_));
    case LiteralValue::Kind::String: return a.str_ == b.str_;
    case LiteralValue::Kind::Boolean: return a.bool_ == b.bool_;
    case LiteralValue::Kind::None: return true;
    case LiteralValue::Kind::Tuple:
    case LiteralValue::Kind::List: return a.items_ == b.items_;
  }
  return false;
}

const char* to_string(LiteralValue::Kind kind) {
  switch (kind) {
    case LiteralValue::Kind::Integer: return "integer";
    case LiteralValue::Kind::Real: return "real";
    case LiteralValue::Kind::String: return "string";
    case LiteralValue::Kind::Boolean: return "boolean";
    case LiteralValue::Kind::None: return "none";
    case LiteralValue::Kind::Tuple: return "tuple";
    case LiteralValue::Kind::List: return "list";
  }
  return "?";
}

std::string format_real(double v) {
  if (std::isnan(v)) return "nan";
  // 1e999 overflows to inf when read back, which is what Python does too.
  if (std::isinf(v)) return v > 0 ? "1e999" : "-1e999";
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  std::string s(buf, res.ptr);
  if (s.find_first_of(".eE") == std::string::npos) s += ".0";
  return s;
}

std::string quote_python_string(std::string_view s) {
  const bool has_single = s.find('\'') != std::string_view::npos;
  const bool has_double = s.find('"') != std::string_view::npos;
  const char quote = (has_single && !has_double) ? '"' : '\'';
  std::string out;
  out.reserve(s.size() + 2);
  out += quote;
  for (unsigned char c : s) {
    switch (c) {
      case '\\': out += "\\\\"; break;
      case '\n': out += "\\n"; break;
      case '\r': out += "\\r"; break;
      case '\t': out += "\\t"; break;
      default:
        if (c == static_cast<unsigned char>(quote)) {
          out += '\\';
          out += static_cast<char>(c);
        } else if (c < 0x20 || c == 0x7f) {
          char buf[8];
          std::snprintf(buf, sizeof(buf), "\\x%02x", c);
          out += buf;
        } else {
          out += static_cast<char>(c);
        }
    }
  }
  out += quote;
  return out;
}

std::string LiteralValue::render() const {
  switch (kind_) {
    case Kind::Integer: return std::to_string(int_);
    case Kind::Real: return format_real(real_);
    case Kind::String: return quote_python_string(str_);
    case Kind::Boolean: return bool_ ? "True" : "False";
    case Kind::None: return "None";
    case Kind::Tuple: {
      std::string out = "(";
      for (std::size_t i = 0; i < items_.size(); ++i) {
        if (i) out += ", ";
        out += items_[i].render();
      }
      if (items_.size() == 1) out += ',';
      return out + ")";
    }
    case Kind::List: {
      std::string out = "[";
      for (std::size_t i = 0; i < items_.size(); ++i) {
        if (i) out += ", ";
        out += items_[i].render();
      }
      return out + "]";
    }
  }
  return {};
}

namespace {

bool is_ident_char(char c) {
  return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '_';
}

bool is_digit(char c) { return c >= '0' && c <= '9'; }

void append_utf8(std::string& out, std::uint32_t cp) {
  if (cp < 0x80) {
    out += static_cast<char>(cp);
  } else if (cp < 0x800) {
    out += static_cast<char>(0xC0 | (cp >> 6));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  } else if (cp < 0x10000) {
    out += static_cast<char>(0xE0 | (cp >> 12));
    out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  } else {
    out += static_cast<char>(0xF0 | (cp >> 18));
    out += static_cast<char>(0x80 | ((cp >> 12) & 0x3F));
    out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  }
}

class LiteralParser {
 public:
  explicit LiteralParser(std::string_view text) : text_(text) {}

  LiteralValue parse_all() {
    skip_ws();
    LiteralValue v = parse_value(0);
    skip_ws();
    if (pos_ != text_.size()) fail("unexpected trailing text");
    return v;
  }

 private:
  static constexpr int kMaxDepth = 256;

  [[noreturn]] void fail(const std::string& what) const { throw ParseError(what, pos_); }
  [[noreturn]] void fail_at(const std::string& what, std::size_t at) const {
    throw ParseError(what, at);
  }

  bool at_end() const { return pos_ >= text_.size(); }
  char peek() const { return at_end() ? '\0' : text_[pos_]; }

  void skip_ws() {
    while (!at_end()) {
      char c = text_[pos_];
      if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
        ++pos_;
      } else if (c == '\\' && pos_ + 1 < text_.size() && text_[pos_ + 1] == '\n') {
        pos_ += 2;  // explicit line continuation
      } else {
        break;
      }
    }
  }

  LiteralValue parse_value(int depth) {
    if (depth > kMaxDepth) fail("nesting too deep");
    if (at_end()) fail("expected a literal");
    char c = peek();
    if (c == '\'' || c == '"') return LiteralValue::string(parse_string());
    if (c == '(') return parse_paren(depth);
    if (c == '[') return parse_list(depth);
    if (c == '{') fail("dictionaries and sets are not in the literal subset");
    if (is_digit(c) || c == '.' || c == '-' || c == '+') return parse_number();
    if (is_ident_char(c)) return parse_keyword();
    fail(std::string("unexpected character '") + c + "'");
  }

  LiteralValue parse_keyword() {
    std::size_t start = pos_;
    while (!at_end() && is_ident_char(peek())) ++pos_;
    std::string_view word = text_.substr(start, pos_ - start);
    if (word == "True") return LiteralValue::boolean(true);
    if (word == "False") return LiteralValue::boolean(false);
    if (word == "None") return LiteralValue::none();
    fail_at("bare name '" + std::string(word) + "' is not a literal", start);
  }

  LiteralValue parse_number() {
    std::size_t start = pos_;
    bool negative = false;
    if (peek() == '+' || peek() == '-') {
      negative = peek() == '-';
      ++pos_;
      skip_ws();
      // Python accepts "-(1)" style unary ops on constants only for numbers.
      if (at_end() || !(is_digit(peek()) || peek() == '.')) fail_at("sign without number", start);
    }
    std::size_t num_start = pos_;
    bool is_real = false;
    while (!at_end() && is_digit(peek())) ++pos_;
    if (peek() == '.') {
      is_real = true;
      ++pos_;
      while (!at_end() && is_digit(peek())) ++pos_;
    }
    if (pos_ == num_start || (pos_ == num_start + 1 && text_[num_start] == '.')) {
      fail_at("malformed number", start);
    }
    if (peek() == 'e' || peek() == 'E') {
      std::size_t exp_pos = pos_;
      ++pos_;
      if (peek() == '+' || peek() == '-') ++pos_;
      if (!is_digit(peek())) fail_at("malformed exponent", exp_pos);
      while (!at_end() && is_digit(peek())) ++pos_;
      is_real = true;
    }
    if (!at_end() && is_ident_char(peek())) fail("unexpected character after number");

    std::string digits(text_.substr(num_start, pos_ - num_start));
    if (!is_real) {
      std::int64_t v = 0;
      auto res = std::from_chars(digits.data(), digits.data() + digits.size(), v);
      if (res.ec == std::errc{} && res.ptr == digits.data() + digits.size()) {
        return LiteralValue::integer(negative ? -v : v);
      }
      // Integers beyond 64 bits degrade to the nearest double.
    }
    double d = 0.0;
    auto res = std::from_chars(digits.data(), digits.data() + digits.size(), d);
    if (res.ec == std::errc::result_out_of_range) {
      d = std::strtod(digits.c_str(), nullptr);
    } else if (res.ec != std::errc{} || res.ptr != digits.data() + digits.size()) {
      fail_at("malformed number", start);
    }
    return LiteralValue::real(negative ? -d : d);
  }

  std::uint32_t parse_hex(std::size_t count) {
    if (pos_ + count > text_.size()) fail("truncated escape");
    std::uint32_t v = 0;
    for (std::size_t i = 0; i < count; ++i) {
      char h = text_[pos_++];
      v <<= 4;
      if (h >= '0' && h <= '9') v |= static_cast<std::uint32_t>(h - '0');
      else if (h >= 'a' && h <= 'f') v |= static_cast<std::uint32_t>(h - 'a' + 10);
      else if (h >= 'A' && h <= 'F') v |= static_cast<std::uint32_t>(h - 'A' + 10);
      else fail_at("bad hex digit in escape", pos_ - 1);
    }
    return v;
  }

  std::string parse_string() {
    const std::size_t start = pos_;
    const char quote = text_[pos_++];
    std::string out;
    while (true) {
      if (at_end()) fail_at("unterminated string", start);
      char c = text_[pos_++];
      if (c == quote) break;
      if (c == '\n') fail_at("newline in single-quoted string", pos_ - 1);
      if (c != '\\') {
        out += c;
        continue;
      }
      if (at_end()) fail_at("unterminated string", start);
      char e = text_[pos_++];
      switch (e) {
        case '\n': break;
        case '\\': out += '\\'; break;
        case '\'': out += '\''; break;
        case '"': out += '"'; break;
        case 'n': out += '\n'; break;
        case 't': out += '\t'; break;
        case 'r': out += '\r'; break;
        case '0': out += '\0'; break;
        case 'a': out += '\a'; break;
        case 'b': out += '\b'; break;
        case 'f': out += '\f'; break;
        case 'v': out += '\v'; break;
        case 'x': append_utf8(out, parse_hex(2)); break;
        case 'u': append_utf8(out, parse_hex(4)); break;
        case 'U': append_utf8(out, parse_hex(8)); break;
        default:
          // Python keeps unrecognised escapes verbatim.
          out += '\\';
          out += e;
      }
    }
    return out;
  }

  std::vector<LiteralValue> parse_items(char close, int depth, bool& saw_comma) {
    std::vector<LiteralValue> items;
    saw_comma = false;
    skip_ws();
    while (peek() != close) {
      if (at_end()) fail(std::string("expected '") + close + "'");
      items.push_back(parse_value(depth + 1));
      skip_ws();
      if (peek() == ',') {
        saw_comma = true;
        ++pos_;
        skip_ws();
      } else if (peek() != close) {
        fail(std::string("expected ',' or '") + close + "'");
      }
    }
    ++pos_;
    return items;
  }

  LiteralValue parse_paren(int depth) {
    ++pos_;
    bool saw_comma = false;
    auto items = parse_items(')', depth, saw_comma);
    if (items.size() == 1 && !saw_comma) return std::move(items.front());
    return LiteralValue::tuple(std::move(items));
  }

  LiteralValue parse_list(int depth) {
    ++pos_;
    bool saw_comma = false;
    return LiteralValue::list(parse_items(']', depth, saw_comma));
  }

  std::string_view text_;
  std::size_t pos_ = 0;
};

}  // namespace

LiteralValue parse_literal(std::string_view text) { return LiteralParser(text).parse_all(); }

std::optional<LiteralValue> try_parse_literal(std::string_view text) {
  try {
    return parse_literal(text);
  } catch (const ParseError&) {
    return std::nullopt;
  }
}

std::vector<std::string_view> split_top_level(std::string_view text) {
  std::vector<std::string_view> pieces;
  int depth = 0;
  char quote = 0;
  std::size_t start = 0;
  for (std::size_t i = 0; i < text.size(); ++i) {
    char c = text[i];
    if (quote) {
      if (c == '\\') ++i;
      else if (c == quote) quote = 0;
      continue;
    }
    switch (c) {
      case '\'':
      case '"': quote = c; break;
      case '(':
      case '[':
      case '{': ++depth; break;
      case ')':
      case ']':
      case '}': --depth; break;
      case ',':
        if (depth == 0) {
          pieces.push_back(text.substr(start, i - start));
          start = i + 1;
        }
        break;
      default: break;
    }
  }
  std::string_view tail = text.substr(start);
  if (tail.find_first_not_of(" \t\r\n") != std::string_view::npos) pieces.push_back(tail);
  return pieces;
}

}  // namespace traceaudit
