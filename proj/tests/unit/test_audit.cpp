// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>

#include "fixtures.hpp"
#include "traceaudit/audit.hpp"
#include "traceaudit/errors.hpp"
#include "traceaudit/format.hpp"

using namespace traceaudit;
using nlohmann::ordered_json;

namespace {

const std::vector<AuditSpec>& shipped_suite() {
  static const auto suite = load_audit_suite(std::string(TRACEAUDIT_DATA_DIR) + "/suites/medcalc_rules.json");
  return suite;
}

const AuditSpec& shipped(const std::string& id) {
  for (const auto& a : shipped_suite()) {
    if (a.id == id) return a;
  }
  throw std::runtime_error("no audit " + id);
}

Predicate pred(const char* json) { return parse_predicate(ordered_json::parse(json), "p"); }

std::string rules_trace(const std::string& analyze_ret, const std::vector<int>& points, int total) {
  std::string t = "Calling analyze_input('note')...\n...analyze_input returned " + analyze_ret + "\n";
  for (int p : points) {
    t += "Calling get_data('note', 'r')...\n...get_data returned 'v'\n";
    t += "Calling evaluate_rule('r', 'v')...\n...evaluate_rule returned " + std::to_string(p) + "\n";
  }
  t += "Calling sum_rules([])...\n...sum_rules returned " + std::to_string(total) + "\n";
  return t;
}

}  // namespace

TEST_CASE("skipped rule is caught") {
  const auto t = parse_trace(fixtures::skipped_rule_trace());
  const auto spec = parse_audit_spec(ordered_json::parse(R"({
    "id": "eval_per_rule", "description": "one eval_rule step per rule",
    "applicability": {"op": "output_kind", "args": {"step": "analyze_input", "field": 0, "kind": "list"}},
    "assertion": {"op": "step_count", "args": {"step": "evaluate_rule", "cmp": "==",
                  "collection_len": {"step": "analyze_input", "field": 0}}}})"));
  const auto v = evaluate_audit(spec, t);
  CHECK(v.outcome == Outcome::Fail);
  REQUIRE(v.detail);
  CHECK(v.detail->find("evaluate_rule") != std::string::npos);
  CHECK(evaluate_audit(shipped("one_eval_rule_per_rule"), t).outcome == Outcome::Fail);

  const auto none = parse_trace("Calling evaluate_rule('r', 1)...\n...evaluate_rule returned 1\n");
  CHECK(evaluate_audit(spec, none).outcome == Outcome::NotApplicable);
  CHECK(evaluate_audit(shipped("analyze_input_three_outputs"), t).outcome == Outcome::Pass);
}

TEST_CASE("shipped suite on clean and flawed traces") {
  const auto clean = parse_trace(rules_trace("(['a', 'b'], 'note', 'q')", {1, 2}, 3));
  for (const auto& a : shipped_suite()) {
    INFO(a.id);
    CHECK(evaluate_audit(a, clean).outcome == Outcome::Pass);
  }
  const auto miscount = parse_trace(rules_trace("(['a', 'b'], 'note', 'q')", {1, 2}, 4));
  CHECK(evaluate_audit(shipped("rule_outputs_summed"), miscount).outcome == Outcome::Fail);
  CHECK(evaluate_audit(shipped("one_eval_rule_per_rule"), miscount).outcome == Outcome::Pass);

  const auto arity = parse_trace(rules_trace("(['a', 'b'], 'q')", {1, 2}, 3));
  CHECK(evaluate_audit(shipped("analyze_input_three_outputs"), arity).outcome == Outcome::Fail);

  const auto scalar = parse_trace(rules_trace("'a and b'", {1, 2}, 3));
  CHECK(evaluate_audit(shipped("rule_output_is_list"), scalar).outcome == Outcome::Fail);
  CHECK(evaluate_audit(shipped("one_eval_rule_per_rule"), scalar).outcome == Outcome::NotApplicable);
}

TEST_CASE("three-valued primitives") {
  const auto t = parse_trace(rules_trace("(['a', 'b', 'c'], 'note', 'q')", {1, 0, 2}, 3));
  CHECK(evaluate_predicate(pred(R"({"op":"step_count","args":{"step":"get_data","value":3}})"), t) == Truth::True);
  CHECK(evaluate_predicate(pred(R"({"op":"step_count","args":{"step":"nope","value":0}})"), t) == Truth::True);
  CHECK(evaluate_predicate(pred(R"({"op":"step_count","args":{"step":"get_data","cmp":"<","value":3}})"), t) ==
        Truth::False);
  CHECK(evaluate_predicate(pred(R"({"op":"output_kind","args":{"step":"nope","kind":"list"}})"), t) ==
        Truth::Undefined);
  CHECK(evaluate_predicate(pred(R"({"op":"output_kind","args":{"step":"sum_rules","kind":"integer"}})"), t) ==
        Truth::True);
  CHECK(evaluate_predicate(pred(R"({"op":"output_matches","args":{"step":"sum_rules"}})"), t) == Truth::True);
  CHECK(evaluate_predicate(pred(R"({"op":"output_matches","args":{"step":"get_data","occurrence":"last"}})"), t) ==
        Truth::False);
  CHECK(evaluate_predicate(pred(R"({"op":"output_arity","args":{"step":"analyze_input","cmp":">=","value":2}})"),
                           t) == Truth::True);
  CHECK(evaluate_predicate(pred(R"({"op":"step_count","args":{"step":"get_data",
        "collection_len":{"step":"analyze_input","field":7}}})"), t) == Truth::Undefined);
  CHECK(evaluate_predicate(pred(R"({"op":"output_kind","args":{"step":"evaluate_rule","occurrence":-1,
        "kind":"integer"}})"), t) == Truth::True);
  CHECK(evaluate_predicate(pred(R"({"op":"output_kind","args":{"step":"evaluate_rule","occurrence":5,
        "kind":"integer"}})"), t) == Truth::Undefined);

  const char* u = R"({"op":"output_kind","args":{"step":"nope","kind":"list"}})";
  const char* tr = R"({"op":"step_count","args":{"step":"sum_rules","value":1}})";
  const char* f = R"({"op":"step_count","args":{"step":"sum_rules","value":2}})";
  auto combo = [&](const char* op, std::vector<const char*> kids) {
    std::string s = std::string(R"({"op":")") + op + R"(","args":[)";
    for (std::size_t i = 0; i < kids.size(); ++i) s += (i ? "," : "") + std::string(kids[i]);
    return evaluate_predicate(parse_predicate(ordered_json::parse(s + "]}"), "p"), t);
  };
  CHECK(combo("and", {tr, u}) == Truth::Undefined);
  CHECK(combo("and", {f, u}) == Truth::False);
  CHECK(combo("or", {tr, u}) == Truth::True);
  CHECK(combo("or", {f, u}) == Truth::Undefined);
  CHECK(combo("not", {u}) == Truth::Undefined);
  CHECK(combo("not", {f}) == Truth::True);
  CHECK(combo("and", {}) == Truth::True);
}

TEST_CASE("arithmetic chain on the GSM8K trace") {
  const auto t = parse_response(fixtures::gsm8k_sample()).trace;
  const auto chain = pred(R"({"op":"arith_chain_consistent","args":{"step":"simplify_equation"}})");
  CHECK(evaluate_predicate(chain, t) == Truth::True);
  CHECK(evaluate_predicate(pred(R"({"op":"arith_chain_consistent","args":{"step":"simplify_equation",
        "mode":"first_to_last"}})"), t) == Truth::Undefined);

  std::string bad = fixtures::gsm8k_sample();
  bad.replace(bad.find("'available_seats = 250.0'"), 25, "'available_seats = 260.0'");
  CHECK(evaluate_predicate(chain, parse_response(bad).trace) == Truth::False);
}

TEST_CASE("suite parsing") {
  CHECK(shipped_suite().size() == 7);
  CHECK(shipped("one_eval_rule_per_rule").description == "one eval_rule step per rule");
  CHECK(parse_audit_suite("").empty());
  CHECK(parse_audit_suite("  \n").empty());
  CHECK(parse_audit_suite("[]").empty());
  CHECK_THROWS_AS(parse_audit_suite(R"([{"id":"x","assertion":{"op":"frobnicate","args":{}}}])"), SchemaError);
  CHECK_THROWS_AS(parse_audit_suite(R"([{"id":"x","assertion":{"op":"step_count","args":{"step":"a"}}}])"),
                  SchemaError);
  CHECK_THROWS_AS(parse_audit_suite(R"([{"id":"x","assertion":{"op":"step_count","args":{"step":"a","value":1}}},
                                        {"id":"x","assertion":{"op":"step_count","args":{"step":"a","value":1}}}])"),
                  SchemaError);
  CHECK_THROWS_AS(parse_audit_suite(R"([{"id":"x","bogus":1,"assertion":{"op":"step_count","args":{"step":"a","value":1}}}])"),
                  SchemaError);
  CHECK_THROWS_AS(parse_audit_suite("{not json"), SchemaError);
  try {
    parse_audit_suite(R"([{"id":"x","assertion":{"op":"output_kind","args":{"step":"a","kind":"dict"}}}])");
    FAIL("expected SchemaError");
  } catch (const SchemaError& e) {
    CHECK(e.field().find("kind") != std::string::npos);
  }
  const auto param = parse_audit_suite(R"([{"id":"x","parameters":{"n":4},
      "assertion":{"op":"output_arity","args":{"step":"a","value":"$n"}}}])");
  CHECK(param[0].assertion.value == 4);
  CHECK_THROWS_AS(parse_audit_suite(R"([{"id":"x","assertion":{"op":"output_arity","args":{"step":"a","value":"$m"}}}])"),
                  SchemaError);
}

TEST_CASE("report row arithmetic") {
  const auto row = make_report_row("eval", "one eval_rule step per rule", 1000, 1000, 140, 140, 29, 860, 404);
  CHECK(row.pct_failed == doctest::Approx(14.0));
  CHECK(format_fixed(row.acc_failing, 2) == "0.21");
  CHECK(format_fixed(row.acc_passing, 2) == "0.47");
  CHECK(format_fixed(row.delta, 2) == "0.26");
  CHECK(row.p_value == doctest::Approx(2.3478880940955547e-09).epsilon(1e-9));
  const auto text = render_audit_report_text({row});
  CHECK(text.find("14.0") != std::string::npos);
  CHECK(text.find("0.21") != std::string::npos);
  CHECK(text.find("0.47") != std::string::npos);
  CHECK(text.find("0.26") != std::string::npos);
  CHECK(text.find("**") != std::string::npos);

  const auto five = make_report_row("x", "", 10, 10, 5, 5, 0, 5, 5);
  CHECK(five.delta == 1.0);
  CHECK(five.p_value == doctest::Approx(2.0 / 252.0).epsilon(1e-12));

  ReportOptions all;
  all.pct_over_all_traces = true;
  CHECK(make_report_row("x", "", 200, 100, 10, 10, 5, 90, 50, all).pct_failed == doctest::Approx(5.0));
  CHECK(make_report_row("x", "", 200, 100, 10, 10, 5, 90, 50).pct_failed == doctest::Approx(10.0));

  const auto csv = render_audit_report_csv({row});
  CHECK(csv.rfind("audit_id,", 0) == 0);
  CHECK(audit_row_to_json(row)["n_fail"] == 140);
}

TEST_CASE("running a suite over a corpus") {
  std::vector<ReasoningTrace> traces;
  std::vector<std::optional<bool>> labels;
  for (int i = 0; i < 40; ++i) {
    const bool flawed = i % 4 == 0;
    traces.push_back(parse_trace(rules_trace("(['a', 'b'], 'n', 'q')", {1, 1}, flawed ? 3 : 2)));
    labels.push_back(i % 10 == 9 ? std::nullopt : std::optional<bool>(!flawed));
  }
  std::vector<AuditedTrace> corpus;
  for (std::size_t i = 0; i < traces.size(); ++i) corpus.push_back({&traces[i], labels[i]});

  const auto rows = run_audit_suite(shipped_suite(), corpus);
  REQUIRE(rows.size() == 1);  // every other audit passes everywhere
  CHECK(rows[0].audit_id == "rule_outputs_summed");
  CHECK(rows[0].n_fail_total == 10);
  CHECK(rows[0].n_fail == 10);
  CHECK(rows[0].n_pass == 26);
  CHECK(rows[0].acc_failing == 0.0);
  CHECK(rows[0].acc_passing == 1.0);

  const auto serial = tally_audits(shipped_suite(), corpus, {}, 1);
  const auto threaded = tally_audits(shipped_suite(), corpus, {}, 3);
  REQUIRE(serial.size() == threaded.size());
  for (std::size_t i = 0; i < serial.size(); ++i) CHECK(serial[i].n_fail == threaded[i].n_fail);

  CHECK_THROWS_AS(run_audit_suite(shipped_suite(), {}), EmptyCorpus);
}
