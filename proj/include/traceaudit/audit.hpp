// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <regex>
#include <string>
#include <vector>

#include <json.hpp>

#include "traceaudit/arith.hpp"
#include "traceaudit/trace.hpp"

namespace traceaudit {

/// Three-valued logic. Undefined arises when a primitive refers to a step
/// (or step output) that the trace does not provide.
enum class Truth { False, True, Undefined };

const char* to_string(Truth t);

enum class Cmp { Eq, Ne, Lt, Le, Gt, Ge };

/// Which of several same-named steps a primitive reads. Negative indices
/// count from the end.
struct Occurrence {
  enum class Kind { First, Last, Index };
  Kind kind = Kind::First;
  std::int64_t index = 0;
};

/// Reference to one step output, optionally to one element of it.
struct OutputRef {
  std::string step;
  Occurrence occurrence;
  std::optional<std::size_t> field;
};

struct Predicate {
  enum class Op {
    StepCount,
    OutputKind,
    OutputMatches,
    OutputArity,
    ArithChainConsistent,
    NumericSumConsistent,
    And,
    Or,
    Not,
  };

  Op op = Op::StepCount;
  OutputRef ref;  // step_count uses ref.step only
  Cmp cmp = Cmp::Eq;
  std::int64_t value = 0;
  std::optional<OutputRef> collection;  // step_count right-hand side
  std::string kind;                     // output_kind
  std::string pattern;                  // output_matches
  std::shared_ptr<const std::regex> regex;
  arith::ChainMode mode = arith::ChainMode::AdjacentPairs;
  double tol = arith::kDefaultRelTol;
  std::vector<std::string> contributors;  // numeric_sum_consistent; ref is the total
  std::vector<Predicate> children;

  /// Short human-readable form used in verdict details.
  std::string describe() const;
};

/// Default "legal number" pattern for output_matches.
inline constexpr const char* kNumberPattern = R"(^[+-]?\d+(\.\d+)?([eE][+-]?\d+)?$)";

struct AuditSpec {
  std::string id;
  std::string description;
  Predicate applicability;
  Predicate assertion;
  nlohmann::ordered_json parameters = nlohmann::ordered_json::object();
};

enum class Outcome { Pass, Fail, NotApplicable };

const char* to_string(Outcome o);

struct AuditVerdict {
  std::string audit_id;
  Outcome outcome = Outcome::NotApplicable;
  std::optional<std::string> detail;
};

Truth evaluate_predicate(const Predicate& p, const ReasoningTrace& trace);

/// Applicability must be True and the assertion defined; otherwise the audit
/// does not apply. On failure `detail` names the first violated primitive.
AuditVerdict evaluate_audit(const AuditSpec& spec, const ReasoningTrace& trace);

/// Parses one predicate node. `path` prefixes SchemaError field names.
Predicate parse_predicate(const nlohmann::ordered_json& node, const std::string& path,
                          const nlohmann::ordered_json& parameters = nlohmann::ordered_json::object());

AuditSpec parse_audit_spec(const nlohmann::ordered_json& node, const std::string& path = "audits[0]");

/// Accepts either {"suite": name, "audits": [...]} or a bare array. An empty
/// (or whitespace-only) document is an empty suite. Audit ids must be unique.
std::vector<AuditSpec> parse_audit_suite(std::string_view text);
std::vector<AuditSpec> load_audit_suite(const std::filesystem::path& path);

struct AuditReportRow {
  std::string audit_id;
  std::string description;
  std::size_t n_traces = 0;       // all traces seen
  std::size_t n_applicable = 0;
  std::size_t n_fail_total = 0;   // fails before the correctness join
  std::size_t n_fail = 0;         // fails with a correctness label
  std::size_t n_pass = 0;
  std::size_t correct_fail = 0;
  std::size_t correct_pass = 0;
  double pct_failed = 0.0;
  double acc_failing = 0.0;
  double acc_passing = 0.0;
  double delta = 0.0;
  double p_value = 1.0;
};

struct AuditedTrace {
  const ReasoningTrace* trace = nullptr;
  std::optional<bool> correct;
};

struct ReportOptions {
  /// Minimum labelled fails and passes for a row to be reported.
  std::size_t min_count = 5;
  /// Use all traces, not only applicable ones, as the %failed denominator.
  bool pct_over_all_traces = false;
};

/// Every audit's row, unfiltered and in suite order.
std::vector<AuditReportRow> tally_audits(const std::vector<AuditSpec>& suite, const std::vector<AuditedTrace>& corpus,
                                         const ReportOptions& options = {}, std::size_t threads = 1);

/// Row arithmetic from raw counts.
AuditReportRow make_report_row(std::string audit_id, std::string description, std::size_t n_traces,
                               std::size_t n_applicable, std::size_t n_fail_total, std::size_t n_fail,
                               std::size_t correct_fail, std::size_t n_pass, std::size_t correct_pass,
                               const ReportOptions& options = {});

/// Rows that pass the reporting filter, stably sorted by pct_failed. Throws
/// EmptyCorpus on an empty corpus.
std::vector<AuditReportRow> run_audit_suite(const std::vector<AuditSpec>& suite,
                                            const std::vector<AuditedTrace>& corpus,
                                            const ReportOptions& options = {}, std::size_t threads = 1);

/// Aligned table with %Failed, Failing, Passing, Delta, p-val (stars) and
/// description columns; values rounded to the table's precision.
std::string render_audit_report_text(const std::vector<AuditReportRow>& rows);
std::string render_audit_report_csv(const std::vector<AuditReportRow>& rows, bool header = true);
nlohmann::ordered_json audit_row_to_json(const AuditReportRow& row);

}  // namespace traceaudit
