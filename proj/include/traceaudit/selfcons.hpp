// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace traceaudit {

struct EquivalencePolicy {
  enum class Mode { Exact, NumericTolerance };
  Mode mode = Mode::NumericTolerance;
  double rel_tol = 0.0;
  double abs_tol = 0.0;
};

/// The answer as a real when the whole trimmed text is a decimal number.
std::optional<double> parse_numeric_answer(std::string_view text);

/// Numeric mode: |a-b| <= max(abs_tol, rel_tol * max(|a|, |b|)) when both
/// sides are numbers, trimmed string equality otherwise. Exact mode compares
/// trimmed strings.
bool answers_equivalent(std::string_view a, std::string_view b, const EquivalencePolicy& policy);

struct VoteResult {
  std::string winner;
  std::size_t cluster_size = 0;
  std::size_t clusters = 0;
};

/// Greedy leader clustering in the given order; the largest cluster wins and
/// ties go to the earliest founded one. Throws std::invalid_argument on empty input.
VoteResult majority_vote(std::span<const std::string> answers, const EquivalencePolicy& policy);

struct Sample {
  std::string answer;
  std::optional<double> typicality_score;
  std::optional<std::string> trace_ref;
};

struct SamplePool {
  std::string question_id;
  std::vector<Sample> samples;  // generation order
  std::string gold;
};

struct VanillaResult {
  double accuracy = 0.0;
  std::size_t n_correct = 0;
  std::size_t total_samples = 0;
  std::vector<std::string> winners;
};

/// Majority vote over the first k samples of every pool.
VanillaResult vanilla_sc(const std::vector<SamplePool>& pools, std::size_t k, const EquivalencePolicy& policy);

/// Samples for a question in tertile 0 (least typical), 1 or 2 (most typical):
/// 1 + max(0, k-1), 1 + max(0, k-3) and 1 respectively.
std::size_t tertile_budget(std::size_t tertile, std::size_t k);

struct AllocationResult {
  std::vector<std::size_t> per_question;
  std::vector<std::size_t> tertile;
  std::size_t total_effective = 0;
  double fraction_of_budget = 0.0;
};

struct GuidedResult {
  double accuracy = 0.0;
  std::size_t n_correct = 0;
  AllocationResult allocation;
  std::vector<std::string> winners;
};

/// `scores[i]` is the typicality of pool i's first sample.
GuidedResult audit_guided_sc(const std::vector<SamplePool>& pools, std::span<const double> scores, std::size_t k,
                             const EquivalencePolicy& policy);

/// Reads each pool's first-sample score; throws SchemaError naming the pool
/// when it is missing.
std::vector<double> first_sample_scores(const std::vector<SamplePool>& pools);

struct SelfConsRow {
  std::size_t k = 0;
  double vanilla_accuracy = 0.0;
  double guided_accuracy = 0.0;
  std::size_t vanilla_samples = 0;
  std::size_t effective_samples = 0;
  double fraction_of_budget = 0.0;
};

std::vector<SelfConsRow> compare_self_consistency(const std::vector<SamplePool>& pools,
                                                  const std::vector<std::size_t>& k_list,
                                                  const EquivalencePolicy& policy);

std::string render_selfcons_text(const std::vector<SelfConsRow>& rows);
std::string render_selfcons_csv(const std::vector<SelfConsRow>& rows, bool header = true);

}  // namespace traceaudit
