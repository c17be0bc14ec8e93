// SPDX-License-Identifier: Apache-2.0
#include "traceaudit/trace.hpp"

#include <algorithm>
#include <set>
#include <unordered_set>
#include <utility>

namespace traceaudit {

namespace {

constexpr std::string_view kWhitespace = " \t\r\n";

std::string_view trim(std::string_view s) {
  auto b = s.find_first_not_of(kWhitespace);
  if (b == std::string_view::npos) return {};
  auto e = s.find_last_not_of(kWhitespace);
  return s.substr(b, e - b + 1);
}

std::string_view ltrim(std::string_view s) {
  auto b = s.find_first_not_of(" \t");
  return b == std::string_view::npos ? std::string_view{} : s.substr(b);
}

std::string_view rtrim(std::string_view s) {
  auto e = s.find_last_not_of(kWhitespace);
  return e == std::string_view::npos ? std::string_view{} : s.substr(0, e + 1);
}

bool ident_start(char c) { return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c == '_'; }
bool ident_char(char c) { return ident_start(c) || (c >= '0' && c <= '9'); }

/// Length of the identifier at the start of `s` (0 if none).
std::size_t ident_length(std::string_view s) {
  if (s.empty() || !ident_start(s[0])) return 0;
  std::size_t n = 1;
  while (n < s.size() && ident_char(s[n])) ++n;
  return n;
}

struct Line {
  std::size_t begin;  // byte offset of the line in the block
  std::string_view text;
};

std::vector<Line> split_lines(std::string_view text) {
  std::vector<Line> lines;
  std::size_t start = 0;
  while (start <= text.size()) {
    auto nl = text.find('\n', start);
    if (nl == std::string_view::npos) {
      if (start < text.size()) lines.push_back({start, text.substr(start)});
      break;
    }
    lines.push_back({start, text.substr(start, nl - start)});
    start = nl + 1;
  }
  return lines;
}

/// Bracket/quote balance scanner that can be fed text incrementally.
struct DelimiterState {
  int depth = 0;
  char quote = 0;
  bool escape = false;

  bool balanced() const { return depth <= 0 && quote == 0; }

  /// Feeds `s`; returns the index just past the character that brought the
  /// depth back to zero, if `stop_at_zero` and that happens.
  std::optional<std::size_t> feed(std::string_view s, bool stop_at_zero) {
    for (std::size_t i = 0; i < s.size(); ++i) {
      char c = s[i];
      if (quote) {
        if (escape) escape = false;
        else if (c == '\\') escape = true;
        else if (c == quote) quote = 0;
        continue;
      }
      if (c == '\'' || c == '"') {
        quote = c;
      } else if (c == '(' || c == '[' || c == '{') {
        ++depth;
      } else if (c == ')' || c == ']' || c == '}') {
        --depth;
        if (stop_at_zero && depth == 0) return i + 1;
      }
    }
    return std::nullopt;
  }
};

std::optional<std::vector<LiteralValue>> parse_args(std::string_view raw) {
  std::vector<LiteralValue> out;
  for (auto piece : split_top_level(raw)) {
    auto v = try_parse_literal(piece);
    if (!v) return std::nullopt;
    out.push_back(std::move(*v));
  }
  return out;
}

struct PendingCall {
  std::string name;
  std::string raw_args;
  std::size_t line;
};

}  // namespace

bool is_identifier(std::string_view s) { return !s.empty() && ident_length(s) == s.size(); }

std::optional<std::string> TaggedResponse::trimmed_answer() const {
  if (!answer) return std::nullopt;
  return std::string(trim(*answer));
}

TaggedResponse extract_tags(std::string_view text) {
  auto grab = [&](std::string_view tag) -> std::optional<std::string> {
    const std::string open = "<" + std::string(tag) + ">";
    const std::string close = "</" + std::string(tag) + ">";
    auto p = text.find(open);
    if (p == std::string_view::npos) return std::nullopt;
    auto body = p + open.size();
    auto q = text.find(close, body);
    if (q == std::string_view::npos) return std::nullopt;
    return std::string(text.substr(body, q - body));
  };
  TaggedResponse out;
  out.think = grab("think");
  out.partial_program = grab("partial_program");
  out.program_trace = grab("program_trace");
  out.answer = grab("answer");
  return out;
}

PartialProgram parse_partial_program(std::string_view text) {
  PartialProgram out;
  const auto lines = split_lines(text);
  std::set<std::string> seen;

  for (std::size_t li = 0; li < lines.size(); ++li) {
    std::string_view line = lines[li].text;
    if (!(line.substr(0, 4) == "def " || line.substr(0, 4) == "def\t")) continue;
    const std::size_t lineno = li + 1;

    // Gather the signature, which may wrap across lines.
    std::string header(line);
    DelimiterState state;
    state.feed(line, false);
    std::size_t last = li;
    while (!state.balanced() && last + 1 < lines.size() && last - li < 32) {
      ++last;
      header += '\n';
      header += lines[last].text;
      state.feed(lines[last].text, false);
    }

    std::string_view h = ltrim(std::string_view(header).substr(3));
    const std::size_t name_len = ident_length(h);
    auto malformed = [&](const std::string& why) {
      out.warnings.push_back({"malformed-def", lineno, why});
    };
    if (name_len == 0) {
      malformed("def without a valid function name");
      continue;
    }
    std::string name(h.substr(0, name_len));
    std::string_view rest = ltrim(h.substr(name_len));
    if (rest.empty() || rest[0] != '(') {
      malformed("def '" + name + "' has no parameter list");
      continue;
    }
    DelimiterState params_state;
    auto close = params_state.feed(rest, true);
    if (!close) {
      malformed("def '" + name + "' has an unbalanced parameter list");
      continue;
    }
    std::string_view params_text = rest.substr(1, *close - 2);
    std::string_view after = trim(rest.substr(*close));
    if (after.empty() || after.back() != ':') {
      malformed("def '" + name + "' does not end with ':'");
      continue;
    }
    after.remove_suffix(1);
    after = trim(after);
    if (!after.empty() && after.substr(0, 2) != "->") {
      malformed("def '" + name + "' has unexpected text after parameters");
      continue;
    }

    FunctionDecl decl;
    decl.name = name;
    for (auto piece : split_top_level(params_text)) {
      std::string_view p = trim(piece);
      while (!p.empty() && p.front() == '*') p.remove_prefix(1);
      const std::size_t n = ident_length(p);
      if (n > 0) decl.params.emplace_back(p.substr(0, n));
    }

    // Docstring: the first non-blank line after the signature.
    std::size_t di = last + 1;
    while (di < lines.size() && trim(lines[di].text).empty()) ++di;
    if (di < lines.size()) {
      std::string_view first = trim(lines[di].text);
      for (std::string_view q : {std::string_view("\"\"\""), std::string_view("'''")}) {
        if (first.substr(0, 3) != q) continue;
        std::string doc;
        std::string_view body = first.substr(3);
        auto end = body.find(q);
        if (end != std::string_view::npos) {
          doc = std::string(body.substr(0, end));
        } else {
          doc = std::string(body);
          for (std::size_t k = di + 1; k < lines.size(); ++k) {
            std::string_view l = lines[k].text;
            auto e = l.find(q);
            doc += '\n';
            if (e != std::string_view::npos) {
              doc += std::string(l.substr(0, e));
              break;
            }
            doc += std::string(l);
          }
        }
        decl.docstring = std::string(trim(doc));
        break;
      }
    }

    if (!seen.insert(decl.name).second) {
      out.warnings.push_back({"duplicate-def", lineno, "function '" + decl.name + "' declared more than once"});
    }
    out.decls.push_back(std::move(decl));
    li = last;
  }
  return out;
}

bool Step::same_content(const Step& other) const {
  return name == other.name && args == other.args && ret == other.ret &&
         (ret.has_value() || raw_ret == other.raw_ret);
}

std::vector<const Step*> ReasoningTrace::steps_named(std::string_view name) const {
  std::vector<const Step*> out;
  for (const auto& s : steps) {
    if (s.name == name) out.push_back(&s);
  }
  return out;
}

std::size_t ReasoningTrace::count(std::string_view name) const {
  return static_cast<std::size_t>(
      std::count_if(steps.begin(), steps.end(), [&](const Step& s) { return s.name == name; }));
}

ReasoningTrace parse_trace(std::string_view text, const std::vector<FunctionDecl>* decls) {
  ReasoningTrace trace;
  const auto lines = split_lines(text);
  std::optional<PendingCall> pending;

  auto warn = [&](std::string kind, std::size_t line, std::string msg) {
    trace.warnings.push_back({std::move(kind), line, std::move(msg)});
  };
  auto drop_pending = [&]() {
    if (pending) {
      warn("unmatched-call", pending->line, "call to '" + pending->name + "' has no matching return");
      pending.reset();
    }
  };

  for (std::size_t li = 0; li < lines.size(); ++li) {
    const std::size_t lineno = li + 1;
    std::string_view stripped = ltrim(lines[li].text);
    if (trim(stripped).empty()) continue;

    if (stripped.substr(0, 8) == "Calling ") {
      std::string_view after = stripped.substr(8);
      const std::size_t n = ident_length(after);
      if (n == 0 || n >= after.size() || after[n] != '(') {
        warn("malformed-call", lineno, "expected 'Calling name(...)'");
        continue;
      }
      std::string name(after.substr(0, n));
      // Scan from the opening parenthesis, across lines if needed.
      const std::size_t open_off = lines[li].begin + (after.data() + n - lines[li].text.data());
      std::string_view from_open = text.substr(open_off);
      DelimiterState st;
      auto close = st.feed(from_open, true);
      std::string raw_args;
      std::size_t end_line = li;
      if (close) {
        raw_args = std::string(from_open.substr(1, *close - 2));
        const std::size_t close_abs = open_off + *close;
        while (end_line + 1 < lines.size() && lines[end_line + 1].begin <= close_abs - 1) ++end_line;
        std::string_view tail = lines[end_line].text.substr(close_abs - lines[end_line].begin);
        std::string_view t = trim(tail);
        if (t.substr(0, 3) != "...") {
          warn("missing-ellipsis", lineno, "call to '" + name + "' is not followed by '...'");
        } else if (t.size() > 3) {
          warn("trailing-text", lineno, "text after '...' in call to '" + name + "'");
        }
      } else {
        // Unbalanced: fall back to the single line when it ends in ")...".
        std::string_view l = rtrim(after.substr(n));
        if (l.size() >= 4 && l.substr(l.size() - 4) == ")...") {
          raw_args = std::string(l.substr(1, l.size() - 5));
          warn("unbalanced-call", lineno, "unbalanced delimiters in arguments of '" + name + "'");
        } else {
          warn("unterminated-call", lineno, "arguments of '" + name + "' never close");
          continue;
        }
      }
      drop_pending();
      pending = PendingCall{std::move(name), std::move(raw_args), lineno};
      li = end_line;
      continue;
    }

    if (stripped.substr(0, 3) == "...") {
      std::string_view after = stripped.substr(3);
      const std::size_t n = ident_length(after);
      std::string_view kw = n ? after.substr(n) : std::string_view{};
      if (n == 0 || kw.substr(0, 9) != " returned" ||
          (kw.size() > 9 && kw[9] != ' ' && kw[9] != '\t')) {
        warn("unrecognized-line", lineno, "line is neither a call nor a return");
        continue;
      }
      std::string name(after.substr(0, n));
      std::string_view payload = ltrim(kw.substr(9));
      std::string raw_ret(rtrim(payload));
      std::size_t end_line = li;

      const bool literal_like = !payload.empty() && std::string_view("([{'\"").find(payload[0]) != std::string_view::npos;
      if (literal_like) {
        DelimiterState st;
        st.feed(payload, false);
        if (!st.balanced()) {
          std::string joined(payload);
          std::size_t k = li;
          while (!st.balanced() && k + 1 < lines.size()) {
            ++k;
            joined += '\n';
            joined += lines[k].text;
            st.feed("\n", false);
            st.feed(lines[k].text, false);
          }
          if (st.balanced()) {
            raw_ret = std::string(rtrim(joined));
            end_line = k;
          } else {
            warn("unbalanced-return", lineno, "unbalanced delimiters in return of '" + name + "'");
          }
        }
      }

      if (!pending) {
        warn("unmatched-return", lineno, "return from '" + name + "' without a preceding call");
      } else if (pending->name != name) {
        drop_pending();
        warn("unmatched-return", lineno, "return from '" + name + "' does not match the open call");
      } else {
        Step step;
        step.index = trace.steps.size();
        step.name = std::move(name);
        step.raw_args = std::move(pending->raw_args);
        step.args = parse_args(step.raw_args);
        step.raw_ret = std::move(raw_ret);
        step.ret = try_parse_literal(step.raw_ret);
        step.line = pending->line;
        trace.steps.push_back(std::move(step));
        pending.reset();
      }
      li = end_line;
      continue;
    }

    warn("unrecognized-line", lineno, "line is neither a call nor a return");
  }
  drop_pending();

  if (decls) {
    std::unordered_set<std::string> declared;
    for (const auto& d : *decls) {
      if (declared.insert(d.name).second) trace.declared_functions.push_back(d.name);
    }
    std::set<std::string> reported;
    for (const auto& s : trace.steps) {
      if (!declared.count(s.name) && reported.insert(s.name).second) {
        warn("undeclared-step", s.line, "step '" + s.name + "' is not declared in the partial program");
      }
    }
  }
  return trace;
}

std::string render_trace(const ReasoningTrace& trace) {
  std::string out;
  for (const auto& s : trace.steps) {
    out += "Calling ";
    out += s.name;
    out += '(';
    if (s.args) {
      for (std::size_t i = 0; i < s.args->size(); ++i) {
        if (i) out += ", ";
        out += (*s.args)[i].render();
      }
    } else {
      out += s.raw_args;
    }
    out += ")...\n...";
    out += s.name;
    out += " returned ";
    out += s.ret ? s.ret->render() : s.raw_ret;
    out += '\n';
  }
  return out;
}

std::string render_partial_program(const std::vector<FunctionDecl>& decls) {
  std::string out;
  for (const auto& d : decls) {
    out += "@traced\ndef " + d.name + "(";
    for (std::size_t i = 0; i < d.params.size(); ++i) {
      if (i) out += ", ";
      out += d.params[i];
    }
    out += "):\n";
    if (d.docstring) out += " \"\"\"" + *d.docstring + "\n \"\"\"\n";
    out += " ...\n\n";
  }
  return out;
}

ParsedResponse parse_response(std::string_view raw_text, std::string source_id) {
  ParsedResponse out;
  out.tags = extract_tags(raw_text);
  if (out.tags.partial_program) out.program = parse_partial_program(*out.tags.partial_program);
  if (out.tags.program_trace) {
    out.trace = parse_trace(*out.tags.program_trace, out.tags.partial_program ? &out.program.decls : nullptr);
  } else {
    out.trace.warnings.push_back({"missing-program-trace", 0, "response has no <program_trace> block"});
  }
  out.trace.source_id = std::move(source_id);
  return out;
}

FormatVerdict validate_format(std::string_view text, std::size_t min_functions) {
  FormatVerdict v;
  const auto tags = extract_tags(text);
  if (!tags.think) v.violations.push_back("missing-think");
  if (!tags.answer) v.violations.push_back("missing-answer");
  if (tags.think && tags.answer) {
    const auto think_close = text.find("</think>");
    const auto answer_open = text.find("<answer>");
    if (answer_open < think_close) v.violations.push_back("misnested-tags");
  }

  std::vector<FunctionDecl> decls;
  if (tags.think) {
    const auto inner = extract_tags(*tags.think);
    if (!inner.partial_program) v.violations.push_back("missing-partial-program");
    if (!inner.program_trace) v.violations.push_back("missing-program-trace");
    if (inner.partial_program) decls = parse_partial_program(*inner.partial_program).decls;
    std::unordered_set<std::string> declared;
    for (const auto& d : decls) declared.insert(d.name);
    if (declared.size() < min_functions) {
      v.violations.push_back("too-few-functions:" + std::to_string(declared.size()));
    }
    if (inner.program_trace) {
      const auto trace = parse_trace(*inner.program_trace);
      std::set<std::string> reported;
      for (const auto& s : trace.steps) {
        if (!declared.count(s.name) && reported.insert(s.name).second) {
          v.violations.push_back("undeclared-step:" + s.name);
        }
      }
    }
  }
  v.valid = v.violations.empty();
  return v;
}

}  // namespace traceaudit
