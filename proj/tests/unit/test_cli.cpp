// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <filesystem>
#include <random>
#include <sstream>

#include "fixtures.hpp"
#include "traceaudit/cli.hpp"
#include "traceaudit/corpus.hpp"

using namespace traceaudit;
using nlohmann::ordered_json;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

class TempDir {
 public:
  TempDir() {
    std::random_device rd;
    path_ = fs::temp_directory_path() / ("traceaudit-test-" + std::to_string(rd()) + std::to_string(rd()));
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  std::string operator/(const std::string& name) const { return (path_ / name).string(); }

 private:
  fs::path path_;
};

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  f << text;
}

std::vector<ordered_json> json_lines(const std::string& text) {
  std::vector<ordered_json> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) out.push_back(ordered_json::parse(line));
  }
  return out;
}

/// Corpus where correctness rises with the record's typicality score.
std::string scored_corpus(std::size_t n, bool tied) {
  std::string text;
  for (std::size_t i = 0; i < n; ++i) {
    ordered_json r{{"id", "r" + std::to_string(i)}, {"raw_text", ""}, {"correct", i >= n / 2}};
    r["metadata"] = {{"typicality_score", tied ? "-1" : std::to_string(-static_cast<double>(n - i))}};
    text += r.dump() + "\n";
  }
  return text;
}

}  // namespace

TEST_CASE("usage and help") {
  CHECK(run({"--help"}).code == kExitOk);
  CHECK(run({}).code == kExitUsage);
  CHECK(run({"frobnicate"}).code == kExitUsage);
  CHECK(run({"parse", "--bogus"}).code == kExitUsage);
  CHECK(run({"parse"}).code == kExitUsage);
  CHECK(run({"parse", "--input", "/nonexistent/x.jsonl"}).code == kExitUsage);
}

TEST_CASE("parse and validate") {
  TempDir dir;
  const auto sample = dir / "sample.jsonl";
  write_text(sample, ordered_json{{"id", "gsm8k"}, {"raw_text", fixtures::gsm8k_sample()}}.dump() + "\n");

  const auto p = run({"parse", "--input", sample, "--format", "json-lines", "--no-header"});
  REQUIRE(p.code == kExitOk);
  const auto lines = json_lines(p.out);
  REQUIRE(lines.size() == 2);
  CHECK(lines[0]["steps"] == 8);
  CHECK(lines[0]["declared_functions"] == 3);
  CHECK(lines[1]["summary"]["warning_rate"] == 0.0);

  const auto empty = dir / "empty.jsonl";
  write_text(empty, "");
  const auto e = run({"parse", "--input", empty, "--format", "json-lines", "--no-header"});
  CHECK(e.code == kExitOk);
  CHECK(json_lines(e.out).back()["summary"]["records"] == 0);

  const auto junk = dir / "junk.jsonl";
  write_text(junk, ordered_json{{"raw_text", "no structure at all"}}.dump() + "\n" +
                       ordered_json{{"raw_text", "<think>Calling f(</think>"}}.dump() + "\n");
  const auto j = run({"parse", "--input", junk, "--format", "json-lines", "--no-header"});
  CHECK(j.code == kExitOk);
  CHECK(json_lines(j.out).back()["summary"]["warning_rate"] == 100.0);

  CHECK(run({"validate", "--input", sample}).code == kExitOk);
  CHECK(run({"validate", "--input", junk}).code == kExitCheckFailed);
  CHECK(run({"validate", "--input", sample, "--min-functions", "4"}).code == kExitCheckFailed);

  const auto text = run({"parse", "--input", sample});
  CHECK(text.out.rfind("# traceaudit parse\n# config: ", 0) == 0);
  CHECK(text.out.find("generated_at") != std::string::npos);
}

TEST_CASE("audit command") {
  TempDir dir;
  const auto flawed = dir / "flawed.jsonl";
  REQUIRE(run({"synth", "--count", "400", "--seed", "3", "--flaw", "skip_rule=0.1", "--flaw", "double_sum=0.1",
               "--flaw", "wrong_arity=0.1", "--output", flawed})
              .code == kExitOk);
  const auto a = run({"audit", "--input", flawed, "--suite", "medcalc_rules", "--format", "json-lines", "--no-header"});
  REQUIRE(a.code == kExitOk);
  const auto rows = json_lines(a.out);
  CHECK(rows.size() >= 3);
  for (const auto& r : rows) {
    CHECK(r["delta"].get<double>() > 0.0);
    CHECK(r["p_value"].get<double>() < 0.05);
  }

  const auto text = run({"audit", "--input", flawed, "--suite", "medcalc_rules", "--no-header"});
  CHECK(text.out.find("one eval_rule step per rule") != std::string::npos);
  const auto csv = run({"audit", "--input", flawed, "--suite", "medcalc_rules", "--no-header", "--format", "csv"});
  CHECK(csv.out.rfind("audit_id,", 0) == 0);

  const auto clean = dir / "clean.jsonl";
  REQUIRE(run({"synth", "--count", "100", "--output", clean}).code == kExitOk);
  const auto c = run({"audit", "--input", clean, "--suite", "medcalc_rules", "--format", "json-lines", "--no-header"});
  CHECK(c.code == kExitOk);
  CHECK(c.out.empty());

  CHECK(run({"audit", "--input", clean, "--suite", dir / "missing.json"}).code == kExitUsage);
  CHECK(run({"audit", "--input", clean}).code == kExitUsage);
}

TEST_CASE("typicality fit, score and report") {
  TempDir dir;
  const auto corpus = dir / "c.jsonl";
  REQUIRE(run({"synth", "--count", "150", "--seed", "4", "--flaw", "shuffle_steps=0.3", "--output", corpus}).code ==
          kExitOk);

  const auto model = dir / "m.json";
  const auto fit = run({"typicality-fit", "--input", corpus, "--kind", "hmm-star", "--states", "1,2", "--ngram",
                        "1,2,3", "--seed", "1", "--output", model});
  REQUIRE(fit.code == kExitOk);
  CHECK(fit.out.find("chosen: S=") != std::string::npos);
  const auto doc = ordered_json::parse(fixtures::read_file(model));
  CHECK(doc["selection"]["grid"].size() == 6);
  CHECK(doc.contains("header"));

  const auto scored = dir / "s.jsonl";
  REQUIRE(run({"typicality-score", "--input", corpus, "--model", model, "--output", scored, "--no-header"}).code ==
          kExitOk);
  const auto scored2 = dir / "s2.jsonl";
  REQUIRE(run({"typicality-score", "--input", scored, "--model", model, "--output", scored2, "--no-header"}).code ==
          kExitOk);
  CHECK(fixtures::read_file(scored) == fixtures::read_file(scored2));

  const auto records = load_corpus(scored).records;
  for (const auto& r : records) CHECK(r.metadata.count("typicality_score") == 1);

  const auto report = run({"report", "--input", scored, "--format", "json-lines", "--no-header"});
  REQUIRE(report.code == kExitOk);
  const auto rows = json_lines(report.out);
  REQUIRE(rows.size() == 4);
  CHECK(rows[0]["section"] == "tertile");

  const auto multi = dir / "mult.json";
  REQUIRE(run({"typicality-fit", "--input", corpus, "--kind", "multinomial", "--ngram", "3", "--output", multi})
              .code == kExitOk);
  const auto ms = run({"typicality-score", "--input", corpus, "--model", multi, "--score-mode", "mean", "--no-header"});
  REQUIRE(ms.code == kExitOk);
  std::istringstream in(ms.out);
  for (const auto& r : read_corpus(in).records) {
    CHECK(std::isfinite(std::stod(r.metadata.at("typicality_score"))));
  }

  CHECK(run({"typicality-fit", "--input", corpus, "--kind", "hmm", "--states", "1,2", "--output", multi}).code ==
        kExitUsage);
  CHECK(run({"typicality-fit", "--input", corpus}).code == kExitUsage);
  CHECK(run({"typicality-score", "--input", corpus, "--model", dir / "none.json"}).code == kExitUsage);
}

TEST_CASE("report fixtures") {
  TempDir dir;
  const auto mono = dir / "mono.jsonl";
  write_text(mono, scored_corpus(96, false));
  const auto r = run({"report", "--input", mono, "--format", "json-lines", "--no-header"});
  REQUIRE(r.code == kExitOk);
  const auto rows = json_lines(r.out);
  REQUIRE(rows.size() == 4);
  CHECK(rows[0]["delta"] == 1.0);
  CHECK(rows[1]["q"] == 2);
  CHECK(rows[1]["abstain_rate"] == 0.0);
  CHECK(rows[3]["q"] == 8);
  CHECK(rows[3]["abstain_rate"] == 0.75);

  const auto text = run({"report", "--input", mono, "--no-header"});
  CHECK(text.out.find("1.00") != std::string::npos);

  const auto tied = dir / "tied.jsonl";
  write_text(tied, scored_corpus(30, true));
  const auto t = run({"report", "--input", tied, "--format", "json-lines", "--no-header"});
  REQUIRE(t.code == kExitOk);
  const auto trows = json_lines(t.out);
  CHECK(trows[0]["tau"].is_null());
  CHECK(trows[0].contains("note"));

  const auto unscored = dir / "u.jsonl";
  write_text(unscored, ordered_json{{"raw_text", ""}, {"correct", true}}.dump() + "\n");
  CHECK(run({"report", "--input", unscored}).code == kExitUsage);
}

TEST_CASE("selfcons command") {
  TempDir dir;
  const auto pools = dir / "pools.jsonl";
  std::string text;
  for (int i = 0; i < 9; ++i) {
    ordered_json p{{"id", "q" + std::to_string(i)}, {"gold_answer", "2"}};
    p["samples"] = ordered_json::array();
    for (const char* a : {"1", "2", "2", "2", "2"}) p["samples"].push_back({{"answer", a}, {"typicality_score", -i}});
    text += p.dump() + "\n";
  }
  write_text(pools, text);
  const auto r = run({"selfcons", "--input", pools, "--k", "1,3,5", "--format", "json-lines", "--no-header"});
  REQUIRE(r.code == kExitOk);
  const auto rows = json_lines(r.out);
  REQUIRE(rows.size() == 3);
  CHECK(rows[0]["vanilla_accuracy"] == rows[0]["guided_accuracy"]);
  CHECK(rows[0]["fraction_of_budget"] == 1.0);
  CHECK(rows[2]["fraction_of_budget"] == 0.6);
  CHECK(rows[2]["vanilla_samples"] == 45);

  write_text(pools, R"({"id":"q","gold_answer":"1","samples":[{"answer":"1"}]})" "\n");
  const auto bad = run({"selfcons", "--input", pools, "--k", "1"});
  CHECK(bad.code == kExitUsage);
  CHECK(bad.err.find("typicality_score") != std::string::npos);
}

TEST_CASE("synth determinism and flags") {
  TempDir dir;
  const std::vector<std::string> base = {"synth", "--count", "50", "--seed", "9", "--flaw", "arith_error=0.5",
                                         "--no-header"};
  const auto a = run(base);
  const auto b = run(base);
  CHECK(a.code == kExitOk);
  CHECK(a.out == b.out);
  auto other = base;
  other[4] = "10";
  CHECK(run(other).out != a.out);

  CHECK(run({"synth", "--flaw", "nonsense=0.1"}).code == kExitUsage);
  CHECK(run({"synth", "--flaw", "skip_rule"}).code == kExitUsage);
  CHECK(run({"synth", "--flaw", "skip_rule=0.8", "--flaw", "double_sum=0.8"}).code == kExitUsage);
  const auto headed = run({"synth", "--count", "1"});
  CHECK(json_lines(headed.out)[0].contains("header"));
}
