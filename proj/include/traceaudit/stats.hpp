// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace traceaudit::stats {

/// 2x2 counts. Rows: audit fail / pass (or bottom / top quantile).
/// Columns: incorrect / correct.
struct ContingencyTable2x2 {
  std::uint64_t a = 0, b = 0, c = 0, d = 0;

  std::uint64_t total() const noexcept { return a + b + c + d; }
};

/// Two-sided Fisher exact test: sums the hypergeometric probabilities of all
/// tables with the observed margins that are no more likely than the observed
/// one (1e-12 relative slack). Throws DegenerateInput on an empty table.
double fisher_exact_two_sided(const ContingencyTable2x2& t);

/// Kendall tau-b, O(n log n). Throws DegenerateInput when x or y is constant
/// and std::invalid_argument on length mismatch or n < 2.
double kendall_tau_b(std::span<const double> x, std::span<const double> y);

struct QuantileAssignment {
  std::size_t q = 0;
  std::vector<std::size_t> quantile;  // per item, 0 = lowest scores
  std::vector<std::size_t> sizes;     // per quantile
};

/// Stable ascending sort by (score, index), cut into q blocks whose sizes
/// differ by at most one; the larger blocks are the lowest quantiles.
QuantileAssignment quantile_partition(std::span<const double> scores, std::size_t q);

struct TertileDeltaRow {
  double tau = 0.0;
  double acc_t1 = 0.0;  // least probable third
  double acc_t3 = 0.0;  // most probable third
  double delta = 0.0;   // acc_t3 - acc_t1
  double p_value = 1.0;
  std::size_t n_t1 = 0, n_t3 = 0;
  std::size_t correct_t1 = 0, correct_t3 = 0;
};

/// Accuracies of the bottom and top tertiles and the Fisher p-value of their
/// difference, without the rank correlation.
TertileDeltaRow tertile_split(std::span<const double> scores, const std::vector<bool>& correct);

/// tertile_split plus Kendall tau-b of scores against correctness.
/// Propagates DegenerateInput when tau is undefined.
TertileDeltaRow tertile_delta(std::span<const double> scores, const std::vector<bool>& correct);

struct AbstentionRow {
  std::size_t q = 0;
  double abstain_rate = 0.0;
  double acc_bottom = 0.0;
  double acc_top = 0.0;
  double delta = 0.0;
  double p_value = 1.0;
};

/// For each q, predicts only on the bottom and top quantiles and abstains on
/// quantiles 1..q-2.
std::vector<AbstentionRow> abstention_curve(std::span<const double> scores,
                                            const std::vector<bool>& correct,
                                            const std::vector<std::size_t>& q_list);

/// Significance marker: "**" for p < 0.05, "*" for p < 0.1, else "".
std::string significance_stars(double p);

}  // namespace traceaudit::stats
