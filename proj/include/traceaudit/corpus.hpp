// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "traceaudit/selfcons.hpp"
#include "traceaudit/trace.hpp"

namespace traceaudit {

struct CorpusRecord {
  std::string id;
  std::string task;
  std::string raw_text;
  std::optional<std::string> predicted_answer;
  std::optional<std::string> gold_answer;
  std::optional<bool> correct;
  std::vector<std::string> flaw_labels;
  std::map<std::string, std::string> metadata;

  /// Parses raw_text (tags, partial program, trace).
  ParsedResponse parse() const { return parse_response(raw_text, id); }

  bool has_flaw(std::string_view label) const;
  bool operator==(const CorpusRecord&) const = default;
};

struct MalformedLine {
  std::size_t line = 0;  // 1-based
  std::string message;
};

struct CorpusLoad {
  std::vector<CorpusRecord> records;
  std::vector<MalformedLine> errors;
  /// Contents of a leading {"header": {...}} line, if present.
  std::optional<nlohmann::ordered_json> header;
};

inline constexpr double kDefaultMalformedThreshold = 0.05;

/// One JSON object per line; blank lines are ignored. Lines that are not
/// objects or lack raw_text are collected as errors. Throws TooManyMalformed
/// when errors exceed `max_malformed_fraction` of the non-blank lines.
CorpusLoad read_corpus(std::istream& in, double max_malformed_fraction = kDefaultMalformedThreshold);
CorpusLoad load_corpus(const std::filesystem::path& path,
                       double max_malformed_fraction = kDefaultMalformedThreshold);

/// Throws SchemaError naming the bad field.
CorpusRecord record_from_json(const nlohmann::ordered_json& obj);
nlohmann::ordered_json record_to_json(const CorpusRecord& record);

void write_corpus(std::ostream& out, const std::vector<CorpusRecord>& records,
                  const std::optional<nlohmann::ordered_json>& header = std::nullopt);
void save_corpus(const std::filesystem::path& path, const std::vector<CorpusRecord>& records,
                 const std::optional<nlohmann::ordered_json>& header = std::nullopt);

bool judge_correct(std::string_view predicted, std::string_view gold, const EquivalencePolicy& policy);

/// Pool files: {"id", "gold_answer", "samples": [{"answer", "typicality_score", "trace_ref"}]} per line.
std::vector<SamplePool> read_pools(std::istream& in);
std::vector<SamplePool> load_pools(const std::filesystem::path& path);
void write_pools(std::ostream& out, const std::vector<SamplePool>& pools,
                 const std::optional<nlohmann::ordered_json>& header = std::nullopt);

// ------------------------------------------------------------ synthetic data

enum class FlawKind { SkipRule, DoubleSum, WrongArity, ArithError, ShuffleSteps };

const char* to_string(FlawKind kind);
/// Throws SchemaError for an unknown name.
FlawKind parse_flaw_kind(std::string_view name);

struct FlawSpec {
  FlawKind kind = FlawKind::SkipRule;
  double rate = 0.0;
};

struct StepVocabulary {
  std::string analyze = "analyze_input";
  std::string get_data = "get_data";
  std::string convert = "convert_units";
  std::string evaluate = "evaluate_rule";
  std::string accumulate = "accumulate_score";
  std::string sum = "sum_rules";
};

struct SynthSchema {
  std::size_t min_rules = 2;
  std::size_t max_rules = 8;
  /// Chance that a rule's data needs a convert_units step.
  double convert_rate = 0.4;
  /// Chance that a clean record misreads one patient value; such records are
  /// wrong but structurally sound.
  double base_error_rate = 0.0;
  std::string task = "medcalc_rules";
  StepVocabulary steps;
};

/// Rule-calculator traces. Each record carries at most one flaw, chosen with
/// the given rates (which must sum to at most 1). Deterministic in `seed`;
/// record i uses its own substream.
std::vector<CorpusRecord> synth_generate(const SynthSchema& schema, std::size_t count,
                                         const std::vector<FlawSpec>& flaws, std::uint64_t seed);

}  // namespace traceaudit
