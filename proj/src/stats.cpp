// SPDX-License-Identifier: Apache-2.0
#include "traceaudit/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "traceaudit/errors.hpp"

namespace traceaudit::stats {

namespace {

double log_choose(std::uint64_t n, std::uint64_t k) {
  return std::lgamma(static_cast<double>(n) + 1.0) - std::lgamma(static_cast<double>(k) + 1.0) -
         std::lgamma(static_cast<double>(n - k) + 1.0);
}

}  // namespace

double fisher_exact_two_sided(const ContingencyTable2x2& t) {
  const std::uint64_t n = t.total();
  if (n == 0) throw DegenerateInput("Fisher test on an empty table");
  const std::uint64_t row1 = t.a + t.b;
  const std::uint64_t row2 = t.c + t.d;
  const std::uint64_t col1 = t.a + t.c;
  const std::uint64_t lo = col1 > row2 ? col1 - row2 : 0;
  const std::uint64_t hi = std::min(row1, col1);
  if (lo == hi) return 1.0;

  // log P(a) up to the common constant -log C(n, col1).
  auto log_weight = [&](std::uint64_t a) { return log_choose(row1, a) + log_choose(row2, col1 - a); };
  const double log_norm = log_choose(n, col1);
  const double observed = log_weight(t.a);
  // Relative slack of 1e-12 on probabilities is an additive slack in log space.
  const double threshold = observed + std::log1p(1e-12);

  double p = 0.0;
  for (std::uint64_t a = lo; a <= hi; ++a) {
    const double w = log_weight(a);
    if (w <= threshold) p += std::exp(w - log_norm);
  }
  return std::min(1.0, p);
}

namespace {

/// Sum of t(t-1)/2 over runs of equal values in an already sorted range.
template <typename Eq>
std::int64_t tied_pairs(std::size_t n, Eq equal_to_prev) {
  std::int64_t total = 0;
  std::int64_t run = 1;
  for (std::size_t i = 1; i < n; ++i) {
    if (equal_to_prev(i)) {
      ++run;
    } else {
      total += run * (run - 1) / 2;
      run = 1;
    }
  }
  return total + run * (run - 1) / 2;
}

/// Merge sort of `v` counting inversions (pairs i<j with v[i] > v[j]).
std::int64_t count_inversions(std::vector<double>& v, std::vector<double>& buf, std::size_t lo, std::size_t hi) {
  if (hi - lo < 2) return 0;
  const std::size_t mid = lo + (hi - lo) / 2;
  std::int64_t inv = count_inversions(v, buf, lo, mid) + count_inversions(v, buf, mid, hi);
  std::size_t i = lo, j = mid, k = lo;
  while (i < mid && j < hi) {
    if (v[j] < v[i]) {
      inv += static_cast<std::int64_t>(mid - i);
      buf[k++] = v[j++];
    } else {
      buf[k++] = v[i++];
    }
  }
  while (i < mid) buf[k++] = v[i++];
  while (j < hi) buf[k++] = v[j++];
  std::copy(buf.begin() + static_cast<std::ptrdiff_t>(lo), buf.begin() + static_cast<std::ptrdiff_t>(hi),
            v.begin() + static_cast<std::ptrdiff_t>(lo));
  return inv;
}

}  // namespace

double kendall_tau_b(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw std::invalid_argument("kendall_tau_b: length mismatch");
  const std::size_t n = x.size();
  if (n < 2) throw std::invalid_argument("kendall_tau_b: need at least two points");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) {
    return x[i] < x[j] || (x[i] == x[j] && y[i] < y[j]);
  });

  const std::int64_t ties_x =
      tied_pairs(n, [&](std::size_t i) { return x[order[i]] == x[order[i - 1]]; });
  const std::int64_t ties_xy = tied_pairs(n, [&](std::size_t i) {
    return x[order[i]] == x[order[i - 1]] && y[order[i]] == y[order[i - 1]];
  });

  std::vector<double> ys(n);
  for (std::size_t i = 0; i < n; ++i) ys[i] = y[order[i]];
  std::vector<double> buf(n);
  const std::int64_t swaps = count_inversions(ys, buf, 0, n);
  const std::int64_t ties_y = tied_pairs(n, [&](std::size_t i) { return ys[i] == ys[i - 1]; });

  const std::int64_t pairs = static_cast<std::int64_t>(n) * static_cast<std::int64_t>(n - 1) / 2;
  if (ties_x == pairs || ties_y == pairs) {
    throw DegenerateInput("Kendall tau is undefined when one variable is constant");
  }
  // Concordant minus discordant over pairs untied in both variables.
  const std::int64_t numerator = pairs - ties_x - ties_y + ties_xy - 2 * swaps;
  const double denom = std::sqrt(static_cast<double>(pairs - ties_x)) *
                       std::sqrt(static_cast<double>(pairs - ties_y));
  return static_cast<double>(numerator) / denom;
}

QuantileAssignment quantile_partition(std::span<const double> scores, std::size_t q) {
  if (q < 2) throw std::invalid_argument("quantile_partition: q must be at least 2");
  const std::size_t n = scores.size();
  if (n < q) throw TooFewItems(n, q);
  for (double s : scores) {
    if (std::isnan(s)) throw std::invalid_argument("quantile_partition: NaN score");
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t i, std::size_t j) { return scores[i] < scores[j]; });

  QuantileAssignment out;
  out.q = q;
  out.quantile.assign(n, 0);
  out.sizes.assign(q, n / q);
  for (std::size_t k = 0; k < n % q; ++k) ++out.sizes[k];

  std::size_t pos = 0;
  for (std::size_t k = 0; k < q; ++k) {
    for (std::size_t m = 0; m < out.sizes[k]; ++m) out.quantile[order[pos++]] = k;
  }
  return out;
}

namespace {

struct GroupCounts {
  std::size_t n = 0;
  std::size_t correct = 0;

  double accuracy() const { return n ? static_cast<double>(correct) / static_cast<double>(n) : 0.0; }
};

void check_lengths(std::span<const double> scores, const std::vector<bool>& correct) {
  if (scores.size() != correct.size()) throw std::invalid_argument("scores and correctness differ in length");
}

std::vector<GroupCounts> group_counts(const QuantileAssignment& qa, const std::vector<bool>& correct) {
  std::vector<GroupCounts> groups(qa.q);
  for (std::size_t i = 0; i < qa.quantile.size(); ++i) {
    auto& g = groups[qa.quantile[i]];
    ++g.n;
    if (correct[i]) ++g.correct;
  }
  return groups;
}

double extremes_p_value(const GroupCounts& bottom, const GroupCounts& top) {
  ContingencyTable2x2 t{bottom.n - bottom.correct, bottom.correct, top.n - top.correct, top.correct};
  return fisher_exact_two_sided(t);
}

}  // namespace

TertileDeltaRow tertile_split(std::span<const double> scores, const std::vector<bool>& correct) {
  check_lengths(scores, correct);
  const auto qa = quantile_partition(scores, 3);
  const auto groups = group_counts(qa, correct);
  TertileDeltaRow row;
  row.n_t1 = groups[0].n;
  row.n_t3 = groups[2].n;
  row.correct_t1 = groups[0].correct;
  row.correct_t3 = groups[2].correct;
  row.acc_t1 = groups[0].accuracy();
  row.acc_t3 = groups[2].accuracy();
  row.delta = row.acc_t3 - row.acc_t1;
  row.p_value = extremes_p_value(groups[0], groups[2]);
  return row;
}

TertileDeltaRow tertile_delta(std::span<const double> scores, const std::vector<bool>& correct) {
  TertileDeltaRow row = tertile_split(scores, correct);
  std::vector<double> labels(correct.size());
  for (std::size_t i = 0; i < correct.size(); ++i) labels[i] = correct[i] ? 1.0 : 0.0;
  row.tau = kendall_tau_b(scores, labels);
  return row;
}

std::vector<AbstentionRow> abstention_curve(std::span<const double> scores, const std::vector<bool>& correct,
                                            const std::vector<std::size_t>& q_list) {
  check_lengths(scores, correct);
  std::vector<AbstentionRow> rows;
  rows.reserve(q_list.size());
  for (std::size_t q : q_list) {
    const auto qa = quantile_partition(scores, q);
    const auto groups = group_counts(qa, correct);
    std::size_t middle = 0;
    for (std::size_t k = 1; k + 1 < q; ++k) middle += groups[k].n;
    AbstentionRow row;
    row.q = q;
    row.abstain_rate = static_cast<double>(middle) / static_cast<double>(scores.size());
    row.acc_bottom = groups.front().accuracy();
    row.acc_top = groups.back().accuracy();
    row.delta = row.acc_top - row.acc_bottom;
    row.p_value = extremes_p_value(groups.front(), groups.back());
    rows.push_back(row);
  }
  return rows;
}

std::string significance_stars(double p) {
  if (p < 0.05) return "**";
  if (p < 0.1) return "*";
  return "";
}

}  // namespace traceaudit::stats
