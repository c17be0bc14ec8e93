// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <random>

#include "fixtures.hpp"
#include "oracles/oracles.hpp"
#include "traceaudit/errors.hpp"
#include "traceaudit/model_io.hpp"
#include "traceaudit/rng.hpp"
#include "traceaudit/typicality.hpp"

using namespace traceaudit;
using namespace traceaudit::typicality;

namespace {

Vocabulary vocab_of(std::size_t k) {
  Vocabulary v;
  for (std::size_t i = 0; i < k; ++i) v.add("t" + std::to_string(i));
  return v;
}

std::vector<double> random_simplex(std::mt19937_64& rng, std::size_t n) {
  std::vector<double> p(n);
  double sum = 0;
  for (auto& x : p) sum += x = std::uniform_real_distribution<double>(0.05, 1.0)(rng);
  for (auto& x : p) x /= sum;
  return p;
}

bool bit_equal(const Matrix& a, const Matrix& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].size() != b[i].size()) return false;
    if (std::memcmp(a[i].data(), b[i].data(), a[i].size() * sizeof(double)) != 0) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("pattern extraction") {
  const auto t = parse_trace(fixtures::skipped_rule_trace());
  CHECK(extract_pattern(t) == Pattern{"analyze_input", "extract_patient_data", "convert_units", "evaluate_rule",
                                      "accumulate_score", "extract_patient_data", "evaluate_rule",
                                      "accumulate_score"});
  CHECK(extract_pattern(ReasoningTrace{}).empty());
  Pattern gsm = {"analyze_input", "convert_to_equations"};
  gsm.insert(gsm.end(), 6, "simplify_equation");
  CHECK(extract_pattern(parse_response(fixtures::gsm8k_sample()).trace) == gsm);
}

TEST_CASE("n-gram tokens and vocabulary") {
  CHECK(ngram_tokens({"a", "b"}, 1) == std::vector<std::string>{"<s>", "a", "b", "</s>"});
  CHECK(ngram_tokens({"a", "b"}, 2) == std::vector<std::string>{"<s> a", "a b", "b </s>"});
  CHECK(ngram_tokens({}, 2) == std::vector<std::string>{"<s> </s>"});
  CHECK(ngram_tokens({"a"}, 10) == std::vector<std::string>{"<s> a </s>"});

  Vocabulary v;
  CHECK(v.size() == Vocabulary::kReserved);
  CHECK(v.token(Vocabulary::kStart) == "[START]");
  CHECK(v.token(Vocabulary::kUnk) == "[UNK]");
  const auto ids = encode_and_extend({"a", "b"}, v, 1);
  CHECK(ids == std::vector<int>{4, 5, 6, 7});
  CHECK(encode({"a", "zzz"}, v, 1) == std::vector<int>{4, 5, Vocabulary::kUnk, 7});
  CHECK(Vocabulary::from_tokens(v.tokens()).tokens() == v.tokens());
  CHECK_THROWS(Vocabulary::from_tokens({"x", "y"}));
}

TEST_CASE("multinomial smoothing") {
  const auto m = MultinomialModel::fit({{"a"}}, 1, 1.0);
  CHECK(m.vocab().size() == 7);
  CHECK(m.probability(m.vocab().id("a")) == doctest::Approx(0.2));
  CHECK(m.probability(Vocabulary::kUnk) == doctest::Approx(0.1));

  const auto flat = MultinomialModel::fit({{"a"}, {"a"}, {"b"}}, 1, 1e9);
  for (std::size_t id = 0; id < flat.vocab().size(); ++id) {
    CHECK(flat.probability(static_cast<int>(id)) == doctest::Approx(1.0 / flat.vocab().size()).epsilon(1e-6));
  }

  Vocabulary two;
  two.add("a");
  two.add("b");
  const auto o = MultinomialModel::from_parameters(two, 1, 1.0, {0, 0, 0, 0, 3, 1}, 2);
  CHECK(o.probability(two.id("a")) == doctest::Approx(2.0 / 3.0));

  double sum = 0;
  for (std::size_t id = 0; id < m.vocab().size(); ++id) sum += m.probability(static_cast<int>(id));
  CHECK(sum == doctest::Approx(1.0));

  const auto tri = MultinomialModel::fit({{"a", "b", "c"}, {"a", "c"}}, 3);
  CHECK(std::isfinite(tri.score({"q", "r", "s", "t"})));
  CHECK(tri.score({"a", "b", "c"}, ScoreMode::PerTokenMean) ==
        doctest::Approx(tri.score({"a", "b", "c"}) / 3.0));
  CHECK_THROWS_AS(MultinomialModel::fit({}, 1), EmptyCorpus);
}

TEST_CASE("forward algorithm matches brute-force path sums") {
  std::mt19937_64 rng(1234);
  for (int f = 0; f < 1000; ++f) {
    const std::size_t S = std::uniform_int_distribution<std::size_t>(1, 3)(rng);
    const std::size_t K = std::uniform_int_distribution<std::size_t>(1, 4)(rng);
    const std::size_t T = std::uniform_int_distribution<std::size_t>(1, 6)(rng);
    auto vocab = vocab_of(K);
    const auto pi = random_simplex(rng, S);
    Matrix a, b;
    for (std::size_t s = 0; s < S; ++s) {
      a.push_back(random_simplex(rng, S));
      b.push_back(random_simplex(rng, vocab.size()));
    }
    std::vector<int> obs(T);
    for (auto& o : obs) o = std::uniform_int_distribution<int>(0, static_cast<int>(vocab.size()) - 1)(rng);
    const auto hmm = CategoricalHmm::from_parameters(vocab, 1, pi, a, b);
    const double want = oracle::hmm_brute_force_log_likelihood(pi, a, b, obs);
    REQUIRE(std::abs(hmm.log_likelihood(obs) - want) <= 1e-9);
  }
}

TEST_CASE("Baum-Welch never decreases the likelihood") {
  std::mt19937_64 rng(77);
  for (int f = 0; f < 200; ++f) {
    const std::size_t K = std::uniform_int_distribution<std::size_t>(2, 5)(rng);
    auto vocab = vocab_of(K);
    std::vector<std::vector<int>> seqs(std::uniform_int_distribution<std::size_t>(1, 6)(rng));
    for (auto& s : seqs) {
      s.resize(std::uniform_int_distribution<std::size_t>(1, 8)(rng));
      for (auto& o : s) o = std::uniform_int_distribution<int>(4, static_cast<int>(3 + K))(rng);
    }
    HmmOptions opt;
    opt.states = std::uniform_int_distribution<std::size_t>(1, 3)(rng);
    opt.seed = rng();
    opt.tol = -1.0;  // run every iteration
    opt.max_iter = 30;
    std::size_t tokens = 0;
    for (const auto& s : seqs) tokens += s.size();
    if (tokens < opt.states) {
      CHECK_THROWS_AS(CategoricalHmm::fit_encoded(seqs, vocab, opt), DegenerateInput);
      continue;
    }
    const auto m = CategoricalHmm::fit_encoded(seqs, vocab, opt);
    const auto& h = m.training_history();
    REQUIRE(h.size() == 31);
    for (std::size_t i = 1; i < h.size(); ++i) REQUIRE(h[i] >= h[i - 1] - 1e-9 * std::max(1.0, std::abs(h[i - 1])));
  }
}

TEST_CASE("HMM fits are deterministic and well formed") {
  std::vector<Pattern> corpus;
  for (int i = 0; i < 40; ++i) {
    Pattern p = {"analyze_input"};
    for (int r = 0; r < 2 + i % 4; ++r) {
      p.push_back("get_data");
      if ((i + r) % 3 == 0) p.push_back("convert_units");
      p.push_back("evaluate_rule");
    }
    p.push_back("sum_rules");
    corpus.push_back(p);
  }
  HmmOptions opt;
  opt.seed = 11;
  opt.restarts = 2;
  const auto a = CategoricalHmm::fit(corpus, opt);
  const auto b = CategoricalHmm::fit(corpus, opt);
  CHECK(std::memcmp(a.initial().data(), b.initial().data(), a.states() * sizeof(double)) == 0);
  CHECK(bit_equal(a.transition(), b.transition()));
  CHECK(bit_equal(a.emission(), b.emission()));
  CHECK(a.training_history() == b.training_history());

  for (const auto& row : a.emission()) {
    double sum = 0;
    for (double x : row) sum += x;
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(row[Vocabulary::kUnk] > 0.0);
  }
  CHECK(std::isfinite(a.score({"never", "seen"})));
  CHECK(a.free_parameters() == 3 * 2 + 2 + 3 * (a.emission_alphabet_size() - 1));
}

TEST_CASE("single-state HMM is the empirical distribution") {
  const std::vector<Pattern> corpus = {{"a", "b"}, {"a", "a", "c"}};
  HmmOptions opt;
  opt.states = 1;
  opt.ngram = 1;
  opt.unk_mass = 0.0;
  const auto m = CategoricalHmm::fit(corpus, opt);
  CHECK(m.transition() == Matrix{{1.0}});
  // tokens: <s> a b </s> <s> a a c </s>
  const auto& e = m.emission()[0];
  CHECK(e[static_cast<std::size_t>(m.vocab().id("a"))] == doctest::Approx(3.0 / 9.0));
  CHECK(e[static_cast<std::size_t>(m.vocab().id("<s>"))] == doctest::Approx(2.0 / 9.0));
  CHECK(e[static_cast<std::size_t>(m.vocab().id("c"))] == doctest::Approx(1.0 / 9.0));
}

TEST_CASE("two separable clusters get their own states") {
  std::vector<std::vector<int>> seqs;
  auto vocab = vocab_of(6);
  std::mt19937_64 rng(3);
  for (int i = 0; i < 30; ++i) {
    std::vector<int> s(10);
    const int base = i % 2 ? 4 : 7;
    for (auto& o : s) o = base + std::uniform_int_distribution<int>(0, 2)(rng);
    seqs.push_back(s);
  }
  HmmOptions opt;
  opt.states = 2;
  opt.seed = 5;
  opt.restarts = 3;
  opt.max_iter = 300;
  opt.tol = 1e-8;
  const auto m = CategoricalHmm::fit_encoded(seqs, vocab, opt);
  for (const auto& row : m.emission()) {
    const double low = row[4] + row[5] + row[6];
    const double high = row[7] + row[8] + row[9];
    CHECK(std::max(low, high) >= 0.9);
  }
}

TEST_CASE("grid search") {
  const std::vector<Pattern> same(30, Pattern{"analyze_input", "get_data", "evaluate_rule", "sum_rules"});
  HmmOptions base;
  base.seed = 2;
  const auto sel = grid_search_hmm(same, kDefaultStateGrid, kDefaultNgramGrid, base);
  CHECK(sel.cells.size() == 24);
  CHECK(sel.cells[sel.chosen].states == 1);
  std::size_t k = 0;
  for (std::size_t s : {1, 2, 5, 10}) {
    for (std::size_t n : {1, 2, 3, 10, 25, 50}) {
      CHECK(sel.cells[k].states == s);
      CHECK(sel.cells[k].ngram == n);
      ++k;
    }
  }
  for (std::size_t i = 0; i < sel.cells.size(); ++i) {
    const auto& c = sel.cells[i];
    if (c.skipped || i == sel.chosen) continue;
    const auto& w = sel.cells[sel.chosen];
    const bool better = std::tie(w.bic, w.param_count, w.states, w.ngram) < std::tie(c.bic, c.param_count, c.states, c.ngram);
    CHECK(better);
  }
  // long n-grams collapse each pattern to one token and are still scored
  const auto& n50 = sel.cells[5];
  CHECK_FALSE(n50.skipped);
  CHECK(n50.n_tokens == 30);
  // cells with fewer tokens than states are skipped
  const std::vector<Pattern> tiny(2, Pattern{"a"});
  const auto small = grid_search_hmm(tiny, {1, 5}, {50}, base);
  CHECK(small.cells[1].skipped);
  CHECK(small.cells[small.chosen].states == 1);

  const auto threaded = grid_search_hmm(same, {1, 2, 5}, {1, 2, 3}, base, 4);
  const auto serial = grid_search_hmm(same, {1, 2, 5}, {1, 2, 3}, base, 1);
  CHECK(threaded.chosen == serial.chosen);
  for (std::size_t i = 0; i < serial.cells.size(); ++i) CHECK(threaded.cells[i].bic == serial.cells[i].bic);
}

TEST_CASE("model serialization round trip") {
  const std::vector<Pattern> corpus = {{"a", "b", "c"}, {"a", "c"}, {"a", "b", "b", "c"}};
  HmmOptions opt;
  opt.states = 2;
  opt.ngram = 2;
  const StoredModel hmm{CategoricalHmm::fit(corpus, opt), std::nullopt, std::nullopt};
  const StoredModel mult{MultinomialModel::fit(corpus, 2, 0.5), std::nullopt, std::nullopt};
  for (const auto* stored : {&hmm, &mult}) {
    const auto back = model_from_json(nlohmann::ordered_json::parse(model_to_json(*stored).dump()));
    for (const auto& p : corpus) CHECK(score(back.model, p) == score(stored->model, p));
    CHECK(score(back.model, {"zz"}) == score(stored->model, {"zz"}));
  }
  auto doc = model_to_json(hmm);
  doc["transition"][0][0] = 5.0;
  CHECK_THROWS_AS(model_from_json(doc), SchemaError);
  auto doc2 = model_to_json(mult);
  doc2.erase("counts");
  try {
    model_from_json(doc2);
    FAIL("expected SchemaError");
  } catch (const SchemaError& e) {
    CHECK(e.field() == "counts");
  }
}

TEST_CASE("seed derivation") {
  CHECK(derive_seed(1, "a") == derive_seed(1, "a"));
  CHECK(derive_seed(1, "a") != derive_seed(1, "b"));
  CHECK(derive_seed(1, "a", 0) != derive_seed(1, "a", 1));
  CHECK(derive_seed(1, "a") != derive_seed(2, "a"));
}
