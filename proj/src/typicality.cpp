// SPDX-License-Identifier: Apache-2.0
#include "traceaudit/typicality.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <limits>
#include <map>
#include <numeric>
#include <stdexcept>
#include <thread>
#include <tuple>

#include "traceaudit/errors.hpp"
#include "traceaudit/rng.hpp"

namespace traceaudit::typicality {

Pattern extract_pattern(const ReasoningTrace& trace) {
  Pattern out;
  out.reserve(trace.steps.size());
  for (const auto& s : trace.steps) out.push_back(s.name);
  return out;
}

// ---------------------------------------------------------------- vocabulary

namespace {
const std::vector<std::string> kReservedTokens = {"[START]", "[END]", "[UNK]", "[PAD]"};
}

Vocabulary::Vocabulary() {
  for (const auto& t : kReservedTokens) add(t);
}

Vocabulary Vocabulary::from_tokens(std::vector<std::string> tokens) {
  if (tokens.size() < kReserved) throw SchemaError("vocab", "fewer entries than reserved tokens");
  for (std::size_t i = 0; i < kReserved; ++i) {
    if (tokens[i] != kReservedTokens[i]) throw SchemaError("vocab[" + std::to_string(i) + "]", "reserved token mismatch");
  }
  Vocabulary v;
  for (std::size_t i = kReserved; i < tokens.size(); ++i) {
    if (v.find(tokens[i])) throw SchemaError("vocab[" + std::to_string(i) + "]", "duplicate token");
    v.add(tokens[i]);
  }
  return v;
}

std::optional<int> Vocabulary::find(std::string_view token) const {
  auto it = index_.find(std::string(token));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

int Vocabulary::id(std::string_view token) const { return find(token).value_or(kUnk); }

int Vocabulary::add(const std::string& token) {
  auto [it, inserted] = index_.emplace(token, static_cast<int>(tokens_.size()));
  if (inserted) tokens_.push_back(token);
  return it->second;
}

std::vector<std::string> ngram_tokens(const Pattern& pattern, std::size_t n) {
  if (n == 0) throw std::invalid_argument("n-gram order must be at least 1");
  std::vector<std::string> symbols;
  symbols.reserve(pattern.size() + 2);
  symbols.emplace_back(kBeginSymbol);
  symbols.insert(symbols.end(), pattern.begin(), pattern.end());
  symbols.emplace_back(kEndSymbol);

  const std::size_t len = symbols.size();
  const std::size_t width = std::min(n, len);
  std::vector<std::string> out;
  out.reserve(len - width + 1);
  for (std::size_t i = 0; i + width <= len; ++i) {
    std::string tok = symbols[i];
    for (std::size_t j = 1; j < width; ++j) {
      tok += ' ';
      tok += symbols[i + j];
    }
    out.push_back(std::move(tok));
  }
  return out;
}

std::vector<int> encode(const Pattern& pattern, const Vocabulary& vocab, std::size_t n) {
  std::vector<int> ids;
  for (const auto& t : ngram_tokens(pattern, n)) ids.push_back(vocab.id(t));
  return ids;
}

std::vector<int> encode_and_extend(const Pattern& pattern, Vocabulary& vocab, std::size_t n) {
  std::vector<int> ids;
  for (const auto& t : ngram_tokens(pattern, n)) ids.push_back(vocab.add(t));
  return ids;
}

namespace {

double finish_score(double total, std::size_t tokens, ScoreMode mode) {
  if (mode == ScoreMode::PerTokenMean) return tokens ? total / static_cast<double>(tokens) : 0.0;
  return total;
}

}  // namespace

// --------------------------------------------------------------- multinomial

MultinomialModel MultinomialModel::fit(const std::vector<Pattern>& patterns, std::size_t n, double alpha,
                                       std::optional<std::size_t> vocab_size_override) {
  if (patterns.empty()) throw EmptyCorpus();
  Vocabulary vocab;
  std::vector<std::uint64_t> counts(vocab.size(), 0);
  for (const auto& p : patterns) {
    for (int id : encode_and_extend(p, vocab, n)) {
      if (static_cast<std::size_t>(id) >= counts.size()) counts.resize(vocab.size(), 0);
      ++counts[static_cast<std::size_t>(id)];
    }
  }
  return from_parameters(std::move(vocab), n, alpha, std::move(counts), vocab_size_override);
}

MultinomialModel MultinomialModel::from_parameters(Vocabulary vocab, std::size_t n, double alpha,
                                                   std::vector<std::uint64_t> counts,
                                                   std::optional<std::size_t> vocab_size_override) {
  if (!(alpha > 0.0) || !std::isfinite(alpha)) throw std::invalid_argument("alpha must be a positive finite number");
  if (n == 0) throw std::invalid_argument("n-gram order must be at least 1");
  if (counts.size() != vocab.size()) throw SchemaError("counts", "length differs from vocabulary size");
  if (vocab_size_override && *vocab_size_override == 0) throw SchemaError("vocab_size_override", "must be positive");
  MultinomialModel m;
  m.vocab_ = std::move(vocab);
  m.counts_ = std::move(counts);
  m.alpha_ = alpha;
  m.n_ = n;
  m.total_ = std::accumulate(m.counts_.begin(), m.counts_.end(), std::uint64_t{0});
  m.override_ = vocab_size_override;
  return m;
}

std::size_t MultinomialModel::effective_vocab_size() const noexcept { return override_.value_or(vocab_.size()); }

double MultinomialModel::probability(int id) const {
  const double c = (id >= 0 && static_cast<std::size_t>(id) < counts_.size())
                       ? static_cast<double>(counts_[static_cast<std::size_t>(id)])
                       : 0.0;
  return (c + alpha_) / (static_cast<double>(total_) + alpha_ * static_cast<double>(effective_vocab_size()));
}

double MultinomialModel::score(const Pattern& pattern, ScoreMode mode) const {
  const auto ids = encode(pattern, vocab_, n_);
  double total = 0.0;
  for (int id : ids) total += log_probability(id);
  return finish_score(total, ids.size(), mode);
}

// ----------------------------------------------------------------------- HMM

namespace {

struct WeightedSequence {
  std::vector<int> ids;
  double weight;
};

/// Identical sequences are merged so EM cost scales with distinct patterns.
std::vector<WeightedSequence> group_sequences(const std::vector<std::vector<int>>& seqs) {
  std::map<std::vector<int>, std::size_t> counts;
  for (const auto& s : seqs) {
    if (!s.empty()) ++counts[s];
  }
  std::vector<WeightedSequence> out;
  out.reserve(counts.size());
  for (auto& [ids, c] : counts) out.push_back({ids, static_cast<double>(c)});
  return out;
}

struct Params {
  std::vector<double> pi;
  Matrix a;
  Matrix b;
};

struct Accumulators {
  std::vector<double> pi;
  Matrix trans;
  std::vector<double> trans_den;
  Matrix emit;
  std::vector<double> emit_den;

  Accumulators(std::size_t s, std::size_t v)
      : pi(s, 0.0), trans(s, std::vector<double>(s, 0.0)), trans_den(s, 0.0),
        emit(s, std::vector<double>(v, 0.0)), emit_den(s, 0.0) {}
};

/// Scaled forward pass. Fills alpha (T x S, each row normalised) and the
/// scaling constants; returns the log-likelihood (-inf if impossible).
double forward(const std::vector<double>& pi, const Matrix& a, const Matrix& b, std::span<const int> obs,
               Matrix* alpha_out, std::vector<double>* scale_out) {
  const std::size_t S = pi.size();
  const std::size_t T = obs.size();
  if (T == 0) return 0.0;
  std::vector<double> cur(S), next(S);
  double ll = 0.0;
  if (alpha_out) alpha_out->assign(T, std::vector<double>(S, 0.0));
  if (scale_out) scale_out->assign(T, 0.0);

  for (std::size_t t = 0; t < T; ++t) {
    const auto o = static_cast<std::size_t>(obs[t]);
    double c = 0.0;
    for (std::size_t j = 0; j < S; ++j) {
      double v;
      if (t == 0) {
        v = pi[j];
      } else {
        v = 0.0;
        for (std::size_t i = 0; i < S; ++i) v += cur[i] * a[i][j];
      }
      v *= b[j][o];
      next[j] = v;
      c += v;
    }
    if (!(c > 0.0)) return -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < S; ++j) next[j] /= c;
    ll += std::log(c);
    std::swap(cur, next);
    if (alpha_out) (*alpha_out)[t] = cur;
    if (scale_out) (*scale_out)[t] = c;
  }
  return ll;
}

/// E-step over all sequences; returns the weighted total log-likelihood.
double expectation(const Params& p, const std::vector<WeightedSequence>& data, Accumulators& acc) {
  const std::size_t S = p.pi.size();
  double total = 0.0;
  Matrix alpha;
  std::vector<double> scale;
  Matrix beta;
  for (const auto& seq : data) {
    const std::size_t T = seq.ids.size();
    const double ll = forward(p.pi, p.a, p.b, seq.ids, &alpha, &scale);
    total += seq.weight * ll;
    if (!std::isfinite(ll)) continue;

    beta.assign(T, std::vector<double>(S, 1.0));
    for (std::size_t t = T - 1; t-- > 0;) {
      const auto o = static_cast<std::size_t>(seq.ids[t + 1]);
      for (std::size_t i = 0; i < S; ++i) {
        double v = 0.0;
        for (std::size_t j = 0; j < S; ++j) v += p.a[i][j] * p.b[j][o] * beta[t + 1][j];
        beta[t][i] = v / scale[t + 1];
      }
    }

    for (std::size_t t = 0; t < T; ++t) {
      const auto o = static_cast<std::size_t>(seq.ids[t]);
      double norm = 0.0;
      for (std::size_t i = 0; i < S; ++i) norm += alpha[t][i] * beta[t][i];
      for (std::size_t i = 0; i < S; ++i) {
        const double g = seq.weight * alpha[t][i] * beta[t][i] / norm;
        if (t == 0) acc.pi[i] += g;
        if (t + 1 < T) acc.trans_den[i] += g;
        acc.emit[i][o] += g;
        acc.emit_den[i] += g;
      }
      if (t + 1 < T) {
        const auto o1 = static_cast<std::size_t>(seq.ids[t + 1]);
        for (std::size_t i = 0; i < S; ++i) {
          for (std::size_t j = 0; j < S; ++j) {
            acc.trans[i][j] +=
                seq.weight * alpha[t][i] * p.a[i][j] * p.b[j][o1] * beta[t + 1][j] / scale[t + 1];
          }
        }
      }
    }
  }
  return total;
}

void normalize(std::vector<double>& row) {
  const double s = std::accumulate(row.begin(), row.end(), 0.0);
  for (double& v : row) v /= s;
}

void maximization(Params& p, const Accumulators& acc) {
  const std::size_t S = p.pi.size();
  p.pi = acc.pi;
  normalize(p.pi);
  for (std::size_t i = 0; i < S; ++i) {
    if (acc.trans_den[i] > 0.0) {
      p.a[i] = acc.trans[i];
      normalize(p.a[i]);
    }
    if (acc.emit_den[i] > 0.0) {
      p.b[i] = acc.emit[i];
      normalize(p.b[i]);
    }
  }
}

Params initial_params(std::size_t S, std::size_t V, std::uint64_t seed) {
  Random rng(seed);
  constexpr double kJitter = 1e-2;
  Params p;
  p.pi.assign(S, 1.0 / static_cast<double>(S));
  for (double& v : p.pi) v += kJitter * rng.uniform();
  normalize(p.pi);
  p.a.assign(S, std::vector<double>(S, 1.0 / static_cast<double>(S)));
  for (auto& row : p.a) {
    for (double& v : row) v += kJitter * rng.uniform();
    normalize(row);
  }
  // Dirichlet(1) over observed tokens; reserved columns stay at zero.
  p.b.assign(S, std::vector<double>(V, 0.0));
  for (auto& row : p.b) {
    for (std::size_t v = Vocabulary::kReserved; v < V; ++v) row[v] = rng.exponential();
    normalize(row);
  }
  return p;
}

struct FitResult {
  Params params;
  std::vector<double> history;
};

FitResult baum_welch(const std::vector<WeightedSequence>& data, std::size_t V, std::size_t n_tokens,
                     const HmmOptions& opt, std::uint64_t seed) {
  const std::size_t S = opt.states;
  FitResult r{initial_params(S, V, seed), {}};
  Accumulators acc(S, V);
  double ll = expectation(r.params, data, acc);
  r.history.push_back(ll);
  for (std::size_t it = 0; it < opt.max_iter; ++it) {
    Params next = r.params;
    maximization(next, acc);
    Accumulators next_acc(S, V);
    const double next_ll = expectation(next, data, next_acc);
    r.params = std::move(next);
    acc = std::move(next_acc);
    r.history.push_back(next_ll);
    const double gain = (next_ll - ll) / static_cast<double>(n_tokens);
    ll = next_ll;
    if (gain < opt.tol) break;
  }
  return r;
}

}  // namespace

CategoricalHmm CategoricalHmm::fit(const std::vector<Pattern>& patterns, const HmmOptions& options) {
  if (patterns.empty()) throw EmptyCorpus();
  Vocabulary vocab;
  std::vector<std::vector<int>> seqs;
  seqs.reserve(patterns.size());
  for (const auto& p : patterns) seqs.push_back(encode_and_extend(p, vocab, options.ngram));
  return fit_encoded(seqs, std::move(vocab), options);
}

CategoricalHmm CategoricalHmm::fit_encoded(const std::vector<std::vector<int>>& sequences, Vocabulary vocab,
                                           const HmmOptions& options) {
  if (options.states == 0) throw std::invalid_argument("HMM needs at least one state");
  if (options.restarts == 0) throw std::invalid_argument("HMM needs at least one restart");
  if (!(options.unk_mass >= 0.0 && options.unk_mass < 1.0)) throw std::invalid_argument("unk_mass must be in [0, 1)");
  if (sequences.empty()) throw EmptyCorpus();
  std::size_t n_tokens = 0;
  for (const auto& s : sequences) {
    for (int id : s) {
      if (id < static_cast<int>(Vocabulary::kReserved) || static_cast<std::size_t>(id) >= vocab.size()) {
        throw std::invalid_argument("training sequence contains a reserved or out-of-range id");
      }
    }
    n_tokens += s.size();
  }
  if (n_tokens < options.states) {
    throw DegenerateInput("corpus has " + std::to_string(n_tokens) + " tokens for " +
                          std::to_string(options.states) + " states");
  }

  const auto data = group_sequences(sequences);
  const std::size_t V = vocab.size();
  std::optional<FitResult> best;
  for (std::size_t r = 0; r < options.restarts; ++r) {
    auto fit = baum_welch(data, V, n_tokens, options, derive_seed(options.seed, "hmm-init", r));
    if (!best || fit.history.back() > best->history.back()) best = std::move(fit);
  }

  // Reserve a little emission mass for n-grams never seen in training.
  auto& b = best->params.b;
  for (auto& row : b) {
    for (double& v : row) v *= 1.0 - options.unk_mass;
    row[Vocabulary::kUnk] = options.unk_mass;
  }

  CategoricalHmm m;
  m.vocab_ = std::move(vocab);
  m.n_ = options.ngram;
  m.initial_ = std::move(best->params.pi);
  m.transition_ = std::move(best->params.a);
  m.emission_ = std::move(b);
  m.options_ = options;
  m.history_ = std::move(best->history);
  return m;
}

namespace {

void check_distribution(const std::vector<double>& row, std::size_t width, const std::string& field) {
  if (row.size() != width) throw SchemaError(field, "expected " + std::to_string(width) + " entries");
  double sum = 0.0;
  for (double v : row) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw SchemaError(field, "entries must be finite and nonnegative");
    sum += v;
  }
  if (std::abs(sum - 1.0) > 1e-10) throw SchemaError(field, "row does not sum to 1");
}

}  // namespace

CategoricalHmm CategoricalHmm::from_parameters(Vocabulary vocab, std::size_t n, std::vector<double> initial,
                                               Matrix transition, Matrix emission, HmmOptions options) {
  if (n == 0) throw SchemaError("ngram", "must be at least 1");
  const std::size_t S = initial.size();
  if (S == 0) throw SchemaError("initial", "empty");
  check_distribution(initial, S, "initial");
  if (transition.size() != S) throw SchemaError("transition", "expected " + std::to_string(S) + " rows");
  if (emission.size() != S) throw SchemaError("emission", "expected " + std::to_string(S) + " rows");
  for (std::size_t i = 0; i < S; ++i) {
    check_distribution(transition[i], S, "transition[" + std::to_string(i) + "]");
    check_distribution(emission[i], vocab.size(), "emission[" + std::to_string(i) + "]");
  }
  options.states = S;
  options.ngram = n;
  CategoricalHmm m;
  m.vocab_ = std::move(vocab);
  m.n_ = n;
  m.initial_ = std::move(initial);
  m.transition_ = std::move(transition);
  m.emission_ = std::move(emission);
  m.options_ = options;
  return m;
}

double CategoricalHmm::log_likelihood(std::span<const int> ids) const {
  for (int id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab_.size()) throw std::out_of_range("token id outside vocabulary");
  }
  return forward(initial_, transition_, emission_, ids, nullptr, nullptr);
}

double CategoricalHmm::score(const Pattern& pattern, ScoreMode mode) const {
  const auto ids = encode(pattern, vocab_, n_);
  return finish_score(log_likelihood(ids), ids.size(), mode);
}

std::size_t CategoricalHmm::free_parameters() const noexcept {
  const std::size_t S = states();
  return S * (S - 1) + (S - 1) + S * (emission_alphabet_size() - 1);
}

double score(const TypicalityModel& model, const Pattern& pattern, ScoreMode mode) {
  return std::visit([&](const auto& m) { return m.score(pattern, mode); }, model);
}

double bic(const CategoricalHmm& model, const std::vector<Pattern>& data) {
  double ll = 0.0;
  std::size_t n_tokens = 0;
  for (const auto& p : data) {
    const auto ids = encode(p, model.vocab(), model.order());
    ll += model.log_likelihood(ids);
    n_tokens += ids.size();
  }
  if (n_tokens == 0) throw DegenerateInput("BIC over an empty token set");
  return static_cast<double>(model.free_parameters()) * std::log(static_cast<double>(n_tokens)) - 2.0 * ll;
}

// --------------------------------------------------------------- grid search

ModelSelection grid_search_hmm(const std::vector<Pattern>& patterns, const std::vector<std::size_t>& states_grid,
                               const std::vector<std::size_t>& ngram_grid, const HmmOptions& base,
                               std::size_t threads) {
  if (patterns.empty()) throw EmptyCorpus();
  if (states_grid.empty() || ngram_grid.empty()) throw std::invalid_argument("empty search grid");

  struct Job {
    std::size_t states, ngram;
  };
  std::vector<Job> jobs;
  for (std::size_t s : states_grid) {
    for (std::size_t n : ngram_grid) jobs.push_back({s, n});
  }
  std::vector<GridCell> cells(jobs.size());
  std::vector<std::optional<CategoricalHmm>> models(jobs.size());

  auto run = [&](std::size_t k) {
    GridCell& cell = cells[k];
    cell.states = jobs[k].states;
    cell.ngram = jobs[k].ngram;
    HmmOptions opt = base;
    opt.states = cell.states;
    opt.ngram = cell.ngram;
    opt.seed = derive_seed(base.seed, "grid", k);
    try {
      auto m = CategoricalHmm::fit(patterns, opt);
      cell.param_count = m.free_parameters();
      for (const auto& p : patterns) {
        const auto ids = encode(p, m.vocab(), m.order());
        cell.log_likelihood += m.log_likelihood(ids);
        cell.n_tokens += ids.size();
      }
      cell.bic = static_cast<double>(cell.param_count) * std::log(static_cast<double>(cell.n_tokens)) -
                 2.0 * cell.log_likelihood;
      models[k] = std::move(m);
    } catch (const DegenerateInput& e) {
      cell.skipped = true;
      cell.skip_reason = e.what();
    }
  };

  const std::size_t workers = std::max<std::size_t>(1, std::min(threads, jobs.size()));
  if (workers == 1) {
    for (std::size_t k = 0; k < jobs.size(); ++k) run(k);
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(workers);
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        try {
          for (std::size_t k = w; k < jobs.size(); k += workers) run(k);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }

  std::optional<std::size_t> chosen;
  for (std::size_t k = 0; k < cells.size(); ++k) {
    if (cells[k].skipped) continue;
    if (!chosen) {
      chosen = k;
      continue;
    }
    const auto& c = cells[k];
    const auto& b = cells[*chosen];
    const auto key = [](const GridCell& g) { return std::tuple(g.bic, g.param_count, g.states, g.ngram); };
    if (key(c) < key(b)) chosen = k;
  }
  if (!chosen) throw DegenerateInput("every grid cell was degenerate");
  return ModelSelection{std::move(cells), *chosen, std::move(*models[*chosen])};
}

}  // namespace traceaudit::typicality
