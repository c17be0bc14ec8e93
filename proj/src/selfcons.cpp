// SPDX-License-Identifier: Apache-2.0
#include "traceaudit/selfcons.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <stdexcept>

#include "traceaudit/errors.hpp"
#include "traceaudit/format.hpp"
#include "traceaudit/stats.hpp"

namespace traceaudit {

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace

std::optional<double> parse_numeric_answer(std::string_view text) {
  text = trim(text);
  if (!text.empty() && text.front() == '+') text.remove_prefix(1);
  if (text.empty()) return std::nullopt;
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}

bool answers_equivalent(std::string_view a, std::string_view b, const EquivalencePolicy& policy) {
  if (policy.mode == EquivalencePolicy::Mode::NumericTolerance) {
    const auto x = parse_numeric_answer(a);
    const auto y = parse_numeric_answer(b);
    if (x && y) {
      return std::abs(*x - *y) <= std::max(policy.abs_tol, policy.rel_tol * std::max(std::abs(*x), std::abs(*y)));
    }
  }
  return trim(a) == trim(b);
}

VoteResult majority_vote(std::span<const std::string> answers, const EquivalencePolicy& policy) {
  if (answers.empty()) throw std::invalid_argument("majority_vote: no answers");
  std::vector<std::size_t> leaders;
  std::vector<std::size_t> sizes;
  for (std::size_t i = 0; i < answers.size(); ++i) {
    bool joined = false;
    for (std::size_t c = 0; c < leaders.size(); ++c) {
      if (answers_equivalent(answers[leaders[c]], answers[i], policy)) {
        ++sizes[c];
        joined = true;
        break;
      }
    }
    if (!joined) {
      leaders.push_back(i);
      sizes.push_back(1);
    }
  }
  std::size_t best = 0;
  for (std::size_t c = 1; c < sizes.size(); ++c) {
    if (sizes[c] > sizes[best]) best = c;
  }
  return {answers[leaders[best]], sizes[best], leaders.size()};
}

namespace {

std::string vote_first(const SamplePool& pool, std::size_t m, const EquivalencePolicy& policy) {
  std::vector<std::string> answers;
  answers.reserve(m);
  for (std::size_t i = 0; i < m; ++i) answers.push_back(pool.samples[i].answer);
  return majority_vote(answers, policy).winner;
}

void check_pools(const std::vector<SamplePool>& pools, std::size_t k) {
  if (pools.empty()) throw EmptyCorpus();
  if (k == 0) throw std::invalid_argument("k must be at least 1");
  for (const auto& p : pools) {
    if (p.samples.size() < k) throw TooFewItems(p.samples.size(), k);
  }
}

}  // namespace

VanillaResult vanilla_sc(const std::vector<SamplePool>& pools, std::size_t k, const EquivalencePolicy& policy) {
  check_pools(pools, k);
  VanillaResult r;
  for (const auto& p : pools) {
    r.winners.push_back(vote_first(p, k, policy));
    if (answers_equivalent(r.winners.back(), p.gold, policy)) ++r.n_correct;
  }
  r.total_samples = k * pools.size();
  r.accuracy = static_cast<double>(r.n_correct) / static_cast<double>(pools.size());
  return r;
}

std::size_t tertile_budget(std::size_t tertile, std::size_t k) {
  const auto extra = [k](std::size_t minus) { return k > minus ? k - minus : std::size_t{0}; };
  switch (tertile) {
    case 0: return 1 + extra(1);
    case 1: return 1 + extra(3);
    case 2: return 1;
  }
  throw std::invalid_argument("tertile index must be 0, 1 or 2");
}

GuidedResult audit_guided_sc(const std::vector<SamplePool>& pools, std::span<const double> scores, std::size_t k,
                             const EquivalencePolicy& policy) {
  check_pools(pools, k);
  if (scores.size() != pools.size()) throw std::invalid_argument("one score per pool is required");
  const auto qa = stats::quantile_partition(scores, 3);
  GuidedResult r;
  for (std::size_t i = 0; i < pools.size(); ++i) {
    const std::size_t t = qa.quantile[i];
    const std::size_t m = std::min(tertile_budget(t, k), k);
    r.allocation.tertile.push_back(t);
    r.allocation.per_question.push_back(m);
    r.allocation.total_effective += m;
    r.winners.push_back(vote_first(pools[i], m, policy));
    if (answers_equivalent(r.winners.back(), pools[i].gold, policy)) ++r.n_correct;
  }
  r.allocation.fraction_of_budget =
      static_cast<double>(r.allocation.total_effective) / static_cast<double>(k * pools.size());
  r.accuracy = static_cast<double>(r.n_correct) / static_cast<double>(pools.size());
  return r;
}

std::vector<double> first_sample_scores(const std::vector<SamplePool>& pools) {
  std::vector<double> out;
  out.reserve(pools.size());
  for (std::size_t i = 0; i < pools.size(); ++i) {
    const auto& p = pools[i];
    if (p.samples.empty() || !p.samples.front().typicality_score) {
      throw SchemaError("pools[" + std::to_string(i) + "].samples[0].typicality_score",
                        "missing for question '" + p.question_id + "'");
    }
    out.push_back(*p.samples.front().typicality_score);
  }
  return out;
}

std::vector<SelfConsRow> compare_self_consistency(const std::vector<SamplePool>& pools,
                                                  const std::vector<std::size_t>& k_list,
                                                  const EquivalencePolicy& policy) {
  const auto scores = first_sample_scores(pools);
  std::vector<SelfConsRow> rows;
  for (std::size_t k : k_list) {
    const auto v = vanilla_sc(pools, k, policy);
    const auto g = audit_guided_sc(pools, scores, k, policy);
    rows.push_back({k, v.accuracy, g.accuracy, v.total_samples, g.allocation.total_effective,
                    g.allocation.fraction_of_budget});
  }
  return rows;
}

std::string render_selfcons_text(const std::vector<SelfConsRow>& rows) {
  std::vector<std::vector<std::string>> cells;
  cells.push_back({"k", "SC acc", "audit acc", "budget", "effective", "%"});
  for (const auto& r : rows) {
    cells.push_back({std::to_string(r.k), format_fixed(r.vanilla_accuracy, 4), format_fixed(r.guided_accuracy, 4),
                     std::to_string(r.vanilla_samples), std::to_string(r.effective_samples),
                     format_fixed(100.0 * r.fraction_of_budget, 2)});
  }
  std::vector<std::size_t> width(6, 0);
  for (const auto& row : cells) {
    for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
  }
  std::string out;
  for (const auto& row : cells) {
    std::string line;
    for (std::size_t c = 0; c < row.size(); ++c) line += (c ? "  " : "") + pad_left(row[c], width[c]);
    out += line + "\n";
  }
  return out;
}

std::string render_selfcons_csv(const std::vector<SelfConsRow>& rows, bool header) {
  std::string out;
  if (header) out += "k,vanilla_accuracy,guided_accuracy,vanilla_samples,effective_samples,fraction_of_budget\n";
  for (const auto& r : rows) {
    out += std::to_string(r.k) + "," + format_exact(r.vanilla_accuracy) + "," + format_exact(r.guided_accuracy) + "," +
           std::to_string(r.vanilla_samples) + "," + std::to_string(r.effective_samples) + "," +
           format_exact(r.fraction_of_budget) + "\n";
  }
  return out;
}

}  // namespace traceaudit
