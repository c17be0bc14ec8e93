// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "traceaudit/literal.hpp"

namespace traceaudit {

/// The four template blocks of a model response. Each field is the exact
/// text between the first `<tag>` and the following `</tag>`.
struct TaggedResponse {
  std::optional<std::string> think;
  std::optional<std::string> partial_program;
  std::optional<std::string> program_trace;
  std::optional<std::string> answer;

  /// The answer block with surrounding whitespace removed.
  std::optional<std::string> trimmed_answer() const;

  bool operator==(const TaggedResponse&) const = default;
};

TaggedResponse extract_tags(std::string_view text);

/// Structural problem found while parsing; `line` is 1-based within the block.
struct ParseWarning {
  std::string kind;
  std::size_t line = 0;
  std::string message;

  bool operator==(const ParseWarning&) const = default;
};

struct FunctionDecl {
  std::string name;
  std::vector<std::string> params;
  std::optional<std::string> docstring;

  bool operator==(const FunctionDecl&) const = default;
};

struct PartialProgram {
  std::vector<FunctionDecl> decls;
  std::vector<ParseWarning> warnings;
};

/// One top-level `def` per declaration; decorators are ignored, duplicate
/// names are kept and reported, malformed defs are skipped with a warning.
PartialProgram parse_partial_program(std::string_view text);

struct Step {
  std::size_t index = 0;
  std::string name;
  /// Parsed arguments; absent when any argument is outside the literal subset.
  std::optional<std::vector<LiteralValue>> args;
  std::string raw_args;
  /// Parsed return value; absent when the payload is not a literal.
  std::optional<LiteralValue> ret;
  std::string raw_ret;
  std::size_t line = 0;

  /// Structural equality on name, arguments and return value.
  bool same_content(const Step& other) const;
};

struct ReasoningTrace {
  std::vector<Step> steps;
  std::vector<std::string> declared_functions;
  std::string source_id;
  std::vector<ParseWarning> warnings;

  std::vector<const Step*> steps_named(std::string_view name) const;
  std::size_t count(std::string_view name) const;
};

/// Parses "Calling f(ARGS)..." / "...f returned VALUE" pairs. Never throws;
/// problems are attached to the returned trace as warnings.
ReasoningTrace parse_trace(std::string_view text,
                           const std::vector<FunctionDecl>* decls = nullptr);

/// Renders steps back into trace text, using rendered literals where the
/// payload parsed and the raw text otherwise.
std::string render_trace(const ReasoningTrace& trace);

/// Renders function declarations as a partial-program block.
std::string render_partial_program(const std::vector<FunctionDecl>& decls);

struct ParsedResponse {
  TaggedResponse tags;
  PartialProgram program;
  ReasoningTrace trace;
};

/// Extracts tags, parses the partial program and the trace of a full model
/// response. A response without a program_trace block yields an empty trace
/// carrying a "missing-program-trace" warning.
ParsedResponse parse_response(std::string_view raw_text, std::string source_id = {});

struct FormatVerdict {
  bool valid = false;
  std::vector<std::string> violations;
};

/// Checks the response template: think/answer present and in order,
/// partial_program and program_trace inside think, at least `min_functions`
/// declarations, and only declared functions invoked in the trace.
FormatVerdict validate_format(std::string_view text, std::size_t min_functions = 3);

bool is_identifier(std::string_view s);

}  // namespace traceaudit
