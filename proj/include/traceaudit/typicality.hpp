// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <variant>
#include <vector>

#include "traceaudit/trace.hpp"

namespace traceaudit::typicality {

/// Ordered step names of a trace.
using Pattern = std::vector<std::string>;

Pattern extract_pattern(const ReasoningTrace& trace);

/// Symbols that bracket every pattern before n-gram windowing.
inline constexpr std::string_view kBeginSymbol = "<s>";
inline constexpr std::string_view kEndSymbol = "</s>";

/// Token <-> id map. Ids 0..3 are reserved control tokens; observed n-grams
/// (including those that contain the bracket symbols) start at id 4.
class Vocabulary {
 public:
  static constexpr int kStart = 0;
  static constexpr int kEnd = 1;
  static constexpr int kUnk = 2;
  static constexpr int kPad = 3;
  static constexpr std::size_t kReserved = 4;

  Vocabulary();

  /// Rebuilds from an id-ordered token list; the reserved prefix must match.
  static Vocabulary from_tokens(std::vector<std::string> tokens);

  int id(std::string_view token) const;  // kUnk when absent
  std::optional<int> find(std::string_view token) const;
  int add(const std::string& token);
  const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  std::size_t size() const noexcept { return tokens_.size(); }
  std::size_t observed_size() const noexcept { return tokens_.size() - kReserved; }
  const std::vector<std::string>& tokens() const noexcept { return tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

/// The n-gram token strings of a pattern: bracketed with begin/end symbols,
/// then every contiguous window of n (stride 1). A bracketed sequence shorter
/// than n becomes a single token.
std::vector<std::string> ngram_tokens(const Pattern& pattern, std::size_t n);

/// Encodes against a fixed vocabulary; unknown n-grams map to UNK.
std::vector<int> encode(const Pattern& pattern, const Vocabulary& vocab, std::size_t n);

/// Training-time encoding: unknown n-grams are added to the vocabulary.
std::vector<int> encode_and_extend(const Pattern& pattern, Vocabulary& vocab, std::size_t n);

enum class ScoreMode { Total, PerTokenMean };

/// Dirichlet-smoothed categorical distribution over n-gram tokens.
class MultinomialModel {
 public:
  static MultinomialModel fit(const std::vector<Pattern>& patterns, std::size_t n, double alpha = 1.0,
                              std::optional<std::size_t> vocab_size_override = std::nullopt);

  static MultinomialModel from_parameters(Vocabulary vocab, std::size_t n, double alpha,
                                          std::vector<std::uint64_t> counts,
                                          std::optional<std::size_t> vocab_size_override);

  /// (count + alpha) / (total + alpha * |V|).
  double probability(int id) const;
  double log_probability(int id) const { return std::log(probability(id)); }
  double score(const Pattern& pattern, ScoreMode mode = ScoreMode::Total) const;

  /// |V| used by the smoothing denominator.
  std::size_t effective_vocab_size() const noexcept;

  const Vocabulary& vocab() const noexcept { return vocab_; }
  const std::vector<std::uint64_t>& counts() const noexcept { return counts_; }
  double alpha() const noexcept { return alpha_; }
  std::size_t order() const noexcept { return n_; }
  std::uint64_t total() const noexcept { return total_; }
  std::optional<std::size_t> vocab_size_override() const noexcept { return override_; }

 private:
  Vocabulary vocab_;
  std::vector<std::uint64_t> counts_;
  double alpha_ = 1.0;
  std::size_t n_ = 1;
  std::uint64_t total_ = 0;
  std::optional<std::size_t> override_;
};

struct HmmOptions {
  std::size_t states = 3;
  std::size_t ngram = 3;
  std::uint64_t seed = 0;
  std::size_t max_iter = 100;
  /// Stop when the per-token log-likelihood gain falls below this.
  double tol = 1e-4;
  std::size_t restarts = 1;
  /// Emission mass moved to UNK after fitting so unseen n-grams score finitely.
  double unk_mass = 1e-4;
};

using Matrix = std::vector<std::vector<double>>;

/// Hidden Markov model with categorical emissions over n-gram tokens.
class CategoricalHmm {
 public:
  /// Baum-Welch on variable-length sequences. Throws DegenerateInput when the
  /// corpus has fewer tokens than states, std::invalid_argument for S = 0.
  static CategoricalHmm fit(const std::vector<Pattern>& patterns, const HmmOptions& options);

  /// Baum-Welch on already encoded sequences over `vocab`.
  static CategoricalHmm fit_encoded(const std::vector<std::vector<int>>& sequences, Vocabulary vocab,
                                    const HmmOptions& options);

  /// Validates shapes and stochasticity (1e-10).
  static CategoricalHmm from_parameters(Vocabulary vocab, std::size_t n, std::vector<double> initial,
                                        Matrix transition, Matrix emission, HmmOptions options = {});

  /// Scaled forward log-likelihood; -inf when the sequence is impossible.
  double log_likelihood(std::span<const int> ids) const;
  double score(const Pattern& pattern, ScoreMode mode = ScoreMode::Total) const;

  /// S(S-1) + (S-1) + S(|V|-1), |V| = observed n-grams + UNK.
  std::size_t free_parameters() const noexcept;
  std::size_t emission_alphabet_size() const noexcept { return vocab_.observed_size() + 1; }

  std::size_t states() const noexcept { return initial_.size(); }
  std::size_t order() const noexcept { return n_; }
  const Vocabulary& vocab() const noexcept { return vocab_; }
  const std::vector<double>& initial() const noexcept { return initial_; }
  const Matrix& transition() const noexcept { return transition_; }
  const Matrix& emission() const noexcept { return emission_; }
  const HmmOptions& options() const noexcept { return options_; }
  /// Total training log-likelihood after each EM iteration (before UNK smoothing).
  const std::vector<double>& training_history() const noexcept { return history_; }

 private:
  Vocabulary vocab_;
  std::size_t n_ = 1;
  std::vector<double> initial_;
  Matrix transition_;
  Matrix emission_;
  HmmOptions options_;
  std::vector<double> history_;
};

using TypicalityModel = std::variant<MultinomialModel, CategoricalHmm>;

double score(const TypicalityModel& model, const Pattern& pattern, ScoreMode mode = ScoreMode::Total);

/// p ln(N) - 2 L over `data`, with N the total token count.
double bic(const CategoricalHmm& model, const std::vector<Pattern>& data);

struct GridCell {
  std::size_t states = 0;
  std::size_t ngram = 0;
  bool skipped = false;
  std::string skip_reason;
  double log_likelihood = 0.0;
  std::size_t param_count = 0;
  std::size_t n_tokens = 0;
  double bic = 0.0;
};

struct ModelSelection {
  std::vector<GridCell> cells;
  std::size_t chosen = 0;
  CategoricalHmm model;
};

inline const std::vector<std::size_t> kDefaultStateGrid = {1, 2, 5, 10};
inline const std::vector<std::size_t> kDefaultNgramGrid = {1, 2, 3, 10, 25, 50};

/// Fits every (states, ngram) cell and keeps the lowest BIC; ties go to fewer
/// parameters, then fewer states, then the smaller n-gram order. Cells that
/// raise DegenerateInput are recorded as skipped; throws DegenerateInput if
/// every cell is skipped. Cells may be fitted on `threads` workers; the
/// result does not depend on the thread count.
ModelSelection grid_search_hmm(const std::vector<Pattern>& patterns,
                               const std::vector<std::size_t>& states_grid = kDefaultStateGrid,
                               const std::vector<std::size_t>& ngram_grid = kDefaultNgramGrid,
                               const HmmOptions& base = {}, std::size_t threads = 1);

}  // namespace traceaudit::typicality
