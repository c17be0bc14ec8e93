// SPDX-License-Identifier: Apache-2.0
#include "traceaudit/cli.hpp"

#include <algorithm>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "traceaudit/audit.hpp"
#include "traceaudit/corpus.hpp"
#include "traceaudit/errors.hpp"
#include "traceaudit/format.hpp"
#include "traceaudit/model_io.hpp"
#include "traceaudit/rng.hpp"
#include "traceaudit/selfcons.hpp"
#include "traceaudit/stats.hpp"
#include "traceaudit/typicality.hpp"

#ifndef TRACEAUDIT_DATA_DIR
#define TRACEAUDIT_DATA_DIR "data"
#endif

namespace traceaudit {

using nlohmann::ordered_json;

namespace {

struct Options {
  std::string input;
  std::string output;
  std::string suite;
  std::string model;
  std::string kind = "hmm-star";
  std::vector<std::size_t> ngram;
  std::vector<std::size_t> states;
  double alpha = 1.0;
  std::uint64_t seed = 0;
  std::vector<std::size_t> quantiles = {2, 4, 8};
  std::vector<std::size_t> k = {1, 3, 5};
  double rel_tol = 0.0;
  double abs_tol = 0.0;
  std::size_t threads = 1;
  std::string format = "text";
  bool no_header = false;

  // subcommand specific
  std::size_t min_functions = 3;
  std::size_t min_count = 5;
  bool pct_over_all = false;
  double malformed_threshold = kDefaultMalformedThreshold;
  std::string score_mode = "total";
  std::size_t max_iter = 100;
  double tol = 1e-4;
  std::size_t restarts = 1;
  std::size_t count = 100;
  std::vector<std::string> flaws;
  std::size_t min_rules = 2;
  std::size_t max_rules = 8;
  double base_error_rate = 0.0;
};

/// Non-zero exit with a message, raised inside command handlers.
struct CommandFailure {
  int code;
  std::string message;
};

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

class Output {
 public:
  Output(const std::string& path, std::ostream& fallback) : stream_(&fallback) {
    if (!path.empty()) {
      file_ = std::make_unique<std::ofstream>(path, std::ios::binary);
      if (!*file_) throw IoError("cannot write " + path);
      stream_ = file_.get();
    }
  }

  std::ostream& stream() { return *stream_; }

  void finish(const std::string& path) {
    stream_->flush();
    if (file_ && !*file_) throw IoError("write failed for " + path);
  }

 private:
  std::unique_ptr<std::ofstream> file_;
  std::ostream* stream_;
};

EquivalencePolicy policy_from(const Options& o) {
  EquivalencePolicy p;
  p.mode = EquivalencePolicy::Mode::NumericTolerance;
  p.rel_tol = o.rel_tol;
  p.abs_tol = o.abs_tol;
  return p;
}

/// Resolved configuration recorded in every output header.
ordered_json resolved_config(const std::string& command, const Options& o) {
  ordered_json c;
  c["command"] = command;
  c["input"] = o.input;
  c["output"] = o.output;
  if (command == "audit") {
    c["suite"] = o.suite;
    c["min_count"] = o.min_count;
    c["pct_over_all_traces"] = o.pct_over_all;
  }
  if (command == "typicality-fit") {
    c["kind"] = o.kind;
    c["ngram"] = o.ngram;
    c["states"] = o.states;
    c["alpha"] = o.alpha;
    c["max_iter"] = o.max_iter;
    c["tol"] = o.tol;
    c["restarts"] = o.restarts;
  }
  if (command == "typicality-score") {
    c["model"] = o.model;
    c["score_mode"] = o.score_mode;
  }
  if (command == "report") c["quantiles"] = o.quantiles;
  if (command == "selfcons") c["k"] = o.k;
  if (command == "synth") {
    c["count"] = o.count;
    c["flaws"] = o.flaws;
    c["min_rules"] = o.min_rules;
    c["max_rules"] = o.max_rules;
    c["base_error_rate"] = o.base_error_rate;
  }
  if (command == "validate") c["min_functions"] = o.min_functions;
  c["seed"] = o.seed;
  c["rel_tol"] = o.rel_tol;
  c["abs_tol"] = o.abs_tol;
  c["threads"] = o.threads;
  c["format"] = o.format;
  return c;
}

ordered_json header_object(const std::string& command, const Options& o) {
  ordered_json h;
  h["tool"] = "traceaudit";
  h["config"] = resolved_config(command, o);
  h["generated_at"] = utc_timestamp();
  return h;
}

/// Header block for text/CSV (comment lines) or JSON lines (one object).
void write_header(std::ostream& os, const std::string& command, const Options& o) {
  if (o.no_header) return;
  const auto h = header_object(command, o);
  if (o.format == "json-lines") {
    os << ordered_json{{"header", h}}.dump() << '\n';
  } else {
    os << "# traceaudit " << command << '\n';
    os << "# config: " << h["config"].dump() << '\n';
    os << "# generated_at: " << h["generated_at"].get<std::string>() << '\n';
  }
}

std::optional<ordered_json> corpus_header(const std::string& command, const Options& o) {
  if (o.no_header) return std::nullopt;
  return header_object(command, o);
}

CorpusLoad read_input_corpus(const Options& o, std::ostream& err) {
  if (o.input.empty()) throw CommandFailure{kExitUsage, "--input is required"};
  auto load = load_corpus(o.input, o.malformed_threshold);
  for (const auto& e : load.errors) err << "warning: " << o.input << ":" << e.line << ": " << e.message << '\n';
  return load;
}

std::optional<bool> resolve_correct(const CorpusRecord& r, const EquivalencePolicy& policy) {
  if (r.correct) return r.correct;
  if (r.predicted_answer && r.gold_answer) return judge_correct(*r.predicted_answer, *r.gold_answer, policy);
  return std::nullopt;
}

// ----------------------------------------------------------------- commands

int cmd_parse(const Options& o, std::ostream& out, std::ostream& err) {
  const auto load = read_input_corpus(o, err);
  Output sink(o.output, out);
  auto& os = sink.stream();
  write_header(os, "parse", o);

  std::map<std::string, std::size_t> histogram;
  std::size_t with_warnings = 0;
  std::size_t total_steps = 0;
  if (o.format == "csv") os << "id,steps,warnings\n";
  std::vector<std::vector<std::string>> table;
  for (const auto& r : load.records) {
    const auto parsed = r.parse();
    std::vector<ParseWarning> warnings = parsed.program.warnings;
    warnings.insert(warnings.end(), parsed.trace.warnings.begin(), parsed.trace.warnings.end());
    std::map<std::string, std::size_t> kinds;
    for (const auto& w : warnings) {
      ++kinds[w.kind];
      ++histogram[w.kind];
    }
    if (!warnings.empty()) ++with_warnings;
    total_steps += parsed.trace.steps.size();
    if (o.format == "json-lines") {
      ordered_json j;
      j["id"] = r.id;
      j["steps"] = parsed.trace.steps.size();
      j["declared_functions"] = parsed.program.decls.size();
      j["warnings"] = ordered_json::object();
      for (const auto& [k, n] : kinds) j["warnings"][k] = n;
      os << j.dump() << '\n';
    } else if (o.format == "csv") {
      os << csv_field(r.id) << ',' << parsed.trace.steps.size() << ',' << warnings.size() << '\n';
    } else {
      table.push_back({r.id, std::to_string(parsed.trace.steps.size()), std::to_string(warnings.size())});
    }
  }
  const std::size_t n = load.records.size();
  const double rate = n ? 100.0 * static_cast<double>(with_warnings) / static_cast<double>(n) : 0.0;
  if (o.format == "json-lines") {
    ordered_json s;
    s["records"] = n;
    s["steps"] = total_steps;
    s["records_with_warnings"] = with_warnings;
    s["warning_rate"] = rate;
    s["warning_histogram"] = ordered_json::object();
    for (const auto& [k, c] : histogram) s["warning_histogram"][k] = c;
    s["malformed_lines"] = load.errors.size();
    os << ordered_json{{"summary", s}}.dump() << '\n';
  } else if (o.format == "text") {
    std::size_t w = 2;
    for (const auto& row : table) w = std::max(w, row[0].size());
    os << pad_right("id", w) << "  steps  warnings\n";
    for (const auto& row : table) os << pad_right(row[0], w) << "  " << pad_left(row[1], 5) << "  " << pad_left(row[2], 8) << '\n';
    os << "records: " << n << ", steps: " << total_steps << ", with warnings: " << with_warnings << " ("
       << format_fixed(rate, 1) << "%)\n";
    for (const auto& [k, c] : histogram) os << "  " << k << ": " << c << '\n';
  }
  sink.finish(o.output);
  return kExitOk;
}

int cmd_validate(const Options& o, std::ostream& out, std::ostream& err) {
  const auto load = read_input_corpus(o, err);
  Output sink(o.output, out);
  auto& os = sink.stream();
  write_header(os, "validate", o);
  std::size_t invalid = 0;
  if (o.format == "csv") os << "id,valid,violations\n";
  for (const auto& r : load.records) {
    const auto v = validate_format(r.raw_text, o.min_functions);
    if (!v.valid) ++invalid;
    std::string joined;
    for (std::size_t i = 0; i < v.violations.size(); ++i) joined += (i ? ";" : "") + v.violations[i];
    if (o.format == "json-lines") {
      os << ordered_json{{"id", r.id}, {"valid", v.valid}, {"violations", v.violations}}.dump() << '\n';
    } else if (o.format == "csv") {
      os << csv_field(r.id) << ',' << (v.valid ? "true" : "false") << ',' << csv_field(joined) << '\n';
    } else {
      os << r.id << ": " << (v.valid ? "valid" : "invalid") << (joined.empty() ? "" : " (" + joined + ")") << '\n';
    }
  }
  if (o.format == "text") os << "valid: " << load.records.size() - invalid << " / " << load.records.size() << '\n';
  sink.finish(o.output);
  return invalid ? kExitCheckFailed : kExitOk;
}

std::filesystem::path resolve_suite(const std::string& name) {
  std::filesystem::path p(name);
  if (std::filesystem::exists(p)) return p;
  const std::filesystem::path shipped = std::filesystem::path(TRACEAUDIT_DATA_DIR) / "suites" / (name + ".json");
  if (p.extension().empty() && std::filesystem::exists(shipped)) return shipped;
  throw IoError("audit suite not found: " + name);
}

int cmd_audit(const Options& o, std::ostream& out, std::ostream& err) {
  if (o.suite.empty()) throw CommandFailure{kExitUsage, "--suite is required"};
  const auto suite = load_audit_suite(resolve_suite(o.suite));
  const auto load = read_input_corpus(o, err);
  if (load.records.empty()) throw EmptyCorpus();
  const auto policy = policy_from(o);

  std::vector<ReasoningTrace> traces;
  traces.reserve(load.records.size());
  for (const auto& r : load.records) traces.push_back(r.parse().trace);
  std::vector<AuditedTrace> corpus;
  for (std::size_t i = 0; i < traces.size(); ++i) corpus.push_back({&traces[i], resolve_correct(load.records[i], policy)});

  ReportOptions ro;
  ro.min_count = o.min_count;
  ro.pct_over_all_traces = o.pct_over_all;
  const auto rows = run_audit_suite(suite, corpus, ro, o.threads);

  Output sink(o.output, out);
  auto& os = sink.stream();
  write_header(os, "audit", o);
  if (o.format == "csv") {
    os << render_audit_report_csv(rows);
  } else if (o.format == "json-lines") {
    for (const auto& r : rows) os << audit_row_to_json(r).dump() << '\n';
  } else {
    os << render_audit_report_text(rows);
  }
  sink.finish(o.output);
  return kExitOk;
}

std::vector<typicality::Pattern> corpus_patterns(const CorpusLoad& load) {
  std::vector<typicality::Pattern> patterns;
  patterns.reserve(load.records.size());
  for (const auto& r : load.records) patterns.push_back(typicality::extract_pattern(r.parse().trace));
  return patterns;
}

int cmd_typicality_fit(const Options& o, std::ostream& out, std::ostream& err) {
  using namespace typicality;
  if (o.output.empty()) throw CommandFailure{kExitUsage, "--output (model file) is required"};
  const auto load = read_input_corpus(o, err);
  if (load.records.empty()) throw EmptyCorpus();
  const auto patterns = corpus_patterns(load);

  HmmOptions hopt;
  hopt.seed = derive_seed(o.seed, "typicality");
  hopt.max_iter = o.max_iter;
  hopt.tol = o.tol;
  hopt.restarts = o.restarts;

  StoredModel stored{MultinomialModel{}, std::nullopt, std::nullopt};
  std::ostringstream summary;
  if (o.kind == "multinomial") {
    const std::size_t n = o.ngram.empty() ? 1 : o.ngram.front();
    if (o.ngram.size() > 1) throw CommandFailure{kExitUsage, "--ngram takes one value for multinomial"};
    auto m = MultinomialModel::fit(patterns, n, o.alpha);
    summary << "multinomial n=" << n << " alpha=" << format_general(o.alpha, 6) << " vocab=" << m.vocab().size()
            << " tokens=" << m.total() << '\n';
    stored.model = std::move(m);
  } else if (o.kind == "hmm") {
    if (o.ngram.size() > 1 || o.states.size() > 1) {
      throw CommandFailure{kExitUsage, "--ngram and --states take one value for hmm"};
    }
    hopt.ngram = o.ngram.empty() ? 3 : o.ngram.front();
    hopt.states = o.states.empty() ? 3 : o.states.front();
    auto m = CategoricalHmm::fit(patterns, hopt);
    summary << "hmm S=" << m.states() << " n=" << m.order() << " iterations=" << m.training_history().size() - 1
            << " log_likelihood=" << format_general(m.training_history().back(), 10)
            << " bic=" << format_general(bic(m, patterns), 10) << '\n';
    stored.model = std::move(m);
  } else if (o.kind == "hmm-star") {
    const auto& sg = o.states.empty() ? kDefaultStateGrid : o.states;
    const auto& ng = o.ngram.empty() ? kDefaultNgramGrid : o.ngram;
    auto sel = grid_search_hmm(patterns, sg, ng, hopt, o.threads);
    summary << pad_left("S", 3) << pad_left("n", 4) << pad_left("log_lik", 16) << pad_left("params", 8)
            << pad_left("bic", 16) << '\n';
    for (std::size_t i = 0; i < sel.cells.size(); ++i) {
      const auto& c = sel.cells[i];
      summary << pad_left(std::to_string(c.states), 3) << pad_left(std::to_string(c.ngram), 4);
      if (c.skipped) {
        summary << "  skipped: " << c.skip_reason << '\n';
        continue;
      }
      summary << pad_left(format_fixed(c.log_likelihood, 4), 16) << pad_left(std::to_string(c.param_count), 8)
              << pad_left(format_fixed(c.bic, 4), 16) << (i == sel.chosen ? "  *" : "") << '\n';
    }
    summary << "chosen: S=" << sel.cells[sel.chosen].states << " n=" << sel.cells[sel.chosen].ngram << '\n';
    stored.grid = sel.cells;
    stored.chosen = sel.chosen;
    stored.model = std::move(sel.model);
  } else {
    throw CommandFailure{kExitUsage, "unknown --kind '" + o.kind + "'"};
  }

  auto doc = model_to_json(stored);
  if (!o.no_header) doc["header"] = header_object("typicality-fit", o);
  std::ofstream f(o.output, std::ios::binary);
  if (!f) throw IoError("cannot write " + o.output);
  f << doc.dump(1) << '\n';
  if (!f) throw IoError("write failed for " + o.output);

  if (o.format == "json-lines") {
    ordered_json j{{"model", o.output}, {"kind", o.kind}};
    if (stored.grid) {
      const auto& c = (*stored.grid)[*stored.chosen];
      j["chosen"] = {{"states", c.states}, {"ngram", c.ngram}, {"bic", c.bic}};
    }
    out << j.dump() << '\n';
  } else {
    out << summary.str();
  }
  return kExitOk;
}

typicality::ScoreMode score_mode_from(const Options& o) {
  if (o.score_mode == "total") return typicality::ScoreMode::Total;
  if (o.score_mode == "mean") return typicality::ScoreMode::PerTokenMean;
  throw CommandFailure{kExitUsage, "--score-mode must be total or mean"};
}

int cmd_typicality_score(const Options& o, std::ostream& out, std::ostream& err) {
  if (o.model.empty()) throw CommandFailure{kExitUsage, "--model is required"};
  const auto mode = score_mode_from(o);
  const auto stored = typicality::load_model(o.model);
  auto load = read_input_corpus(o, err);
  for (auto& r : load.records) {
    const double s = typicality::score(stored.model, typicality::extract_pattern(r.parse().trace), mode);
    r.metadata["typicality_score"] = format_exact(s);
  }
  Output sink(o.output, out);
  write_corpus(sink.stream(), load.records, corpus_header("typicality-score", o));
  sink.finish(o.output);
  return kExitOk;
}

int cmd_report(const Options& o, std::ostream& out, std::ostream& err) {
  const auto load = read_input_corpus(o, err);
  const auto policy = policy_from(o);
  std::vector<double> scores;
  std::vector<bool> correct;
  for (const auto& r : load.records) {
    auto it = r.metadata.find("typicality_score");
    if (it == r.metadata.end()) throw CommandFailure{kExitUsage, "record " + r.id + " has no typicality_score"};
    const auto s = parse_numeric_answer(it->second);
    if (!s) throw CommandFailure{kExitUsage, "record " + r.id + " has a non-numeric typicality_score"};
    const auto c = resolve_correct(r, policy);
    if (!c) continue;
    scores.push_back(*s);
    correct.push_back(*c);
  }

  struct Row {
    std::string section;
    std::size_t q;
    std::optional<double> tau;
    double abstain, acc_low, acc_high, delta, p;
    std::string note;
  };
  std::vector<Row> rows;
  {
    auto t = stats::tertile_split(scores, correct);
    Row row{"tertile", 3, std::nullopt, 1.0 / 3.0, t.acc_t1, t.acc_t3, t.delta, t.p_value, ""};
    const auto qa = stats::quantile_partition(scores, 3);
    row.abstain = static_cast<double>(qa.sizes[1]) / static_cast<double>(scores.size());
    std::vector<double> labels(correct.size());
    for (std::size_t i = 0; i < correct.size(); ++i) labels[i] = correct[i] ? 1.0 : 0.0;
    try {
      row.tau = stats::kendall_tau_b(scores, labels);
    } catch (const DegenerateInput& e) {
      row.note = e.what();
    }
    rows.push_back(std::move(row));
  }
  for (const auto& a : stats::abstention_curve(scores, correct, o.quantiles)) {
    rows.push_back({"abstention", a.q, std::nullopt, a.abstain_rate, a.acc_bottom, a.acc_top, a.delta, a.p_value, ""});
  }

  Output sink(o.output, out);
  auto& os = sink.stream();
  write_header(os, "report", o);
  if (o.format == "csv") {
    os << "section,q,tau,abstain_rate,acc_low,acc_high,delta,p_value,stars,note\n";
    for (const auto& r : rows) {
      os << r.section << ',' << r.q << ',' << (r.tau ? format_exact(*r.tau) : "") << ',' << format_exact(r.abstain)
         << ',' << format_exact(r.acc_low) << ',' << format_exact(r.acc_high) << ',' << format_exact(r.delta) << ','
         << format_exact(r.p) << ',' << stats::significance_stars(r.p) << ',' << csv_field(r.note) << '\n';
    }
  } else if (o.format == "json-lines") {
    for (const auto& r : rows) {
      ordered_json j{{"section", r.section}, {"q", r.q}};
      j["tau"] = r.tau ? ordered_json(*r.tau) : ordered_json(nullptr);
      j["abstain_rate"] = r.abstain;
      j["acc_low"] = r.acc_low;
      j["acc_high"] = r.acc_high;
      j["delta"] = r.delta;
      j["p_value"] = r.p;
      j["stars"] = stats::significance_stars(r.p);
      if (!r.note.empty()) j["note"] = r.note;
      os << j.dump() << '\n';
    }
  } else {
    const auto& t = rows.front();
    os << "n = " << scores.size() << "\n";
    os << "   tau  T1 acc  T3 acc  Delta     p-val\n";
    os << pad_left(t.tau ? format_fixed(*t.tau, 2) : "n/a", 6) << pad_left(format_fixed(t.acc_low, 2), 8)
       << pad_left(format_fixed(t.acc_high, 2), 8) << pad_left(format_fixed(t.delta, 2), 7)
       << pad_left(format_general(t.p), 10) << ' ' << stats::significance_stars(t.p) << '\n';
    if (!t.note.empty()) os << "note: " << t.note << '\n';
    os << "\n q  abstain  bottom     top  Delta     p-val\n";
    for (std::size_t i = 1; i < rows.size(); ++i) {
      const auto& r = rows[i];
      os << pad_left(std::to_string(r.q), 2) << pad_left(format_fixed(r.abstain, 4), 9)
         << pad_left(format_fixed(r.acc_low, 2), 8) << pad_left(format_fixed(r.acc_high, 2), 8)
         << pad_left(format_fixed(r.delta, 2), 7) << pad_left(format_general(r.p), 10) << ' '
         << stats::significance_stars(r.p) << '\n';
    }
  }
  sink.finish(o.output);
  return kExitOk;
}

int cmd_selfcons(const Options& o, std::ostream& out, std::ostream&) {
  if (o.input.empty()) throw CommandFailure{kExitUsage, "--input is required"};
  const auto pools = load_pools(o.input);
  const auto rows = compare_self_consistency(pools, o.k, policy_from(o));
  Output sink(o.output, out);
  auto& os = sink.stream();
  write_header(os, "selfcons", o);
  if (o.format == "csv") {
    os << render_selfcons_csv(rows);
  } else if (o.format == "json-lines") {
    for (const auto& r : rows) {
      os << ordered_json{{"k", r.k},
                         {"vanilla_accuracy", r.vanilla_accuracy},
                         {"guided_accuracy", r.guided_accuracy},
                         {"vanilla_samples", r.vanilla_samples},
                         {"effective_samples", r.effective_samples},
                         {"fraction_of_budget", r.fraction_of_budget}}
                .dump()
         << '\n';
    }
  } else {
    os << render_selfcons_text(rows);
  }
  sink.finish(o.output);
  return kExitOk;
}

int cmd_synth(const Options& o, std::ostream& out, std::ostream&) {
  std::vector<FlawSpec> flaws;
  for (const auto& f : o.flaws) {
    const auto eq = f.find('=');
    if (eq == std::string::npos) throw CommandFailure{kExitUsage, "--flaw expects kind=rate, got '" + f + "'"};
    const auto rate = parse_numeric_answer(f.substr(eq + 1));
    if (!rate) throw CommandFailure{kExitUsage, "--flaw rate is not a number: '" + f + "'"};
    flaws.push_back({parse_flaw_kind(f.substr(0, eq)), *rate});
  }
  SynthSchema schema;
  schema.min_rules = o.min_rules;
  schema.max_rules = o.max_rules;
  schema.base_error_rate = o.base_error_rate;
  const auto records = synth_generate(schema, o.count, flaws, derive_seed(o.seed, "corpus"));
  Output sink(o.output, out);
  write_corpus(sink.stream(), records, corpus_header("synth", o));
  sink.finish(o.output);
  return kExitOk;
}

// --------------------------------------------------------------- option wiring

void add_io(CLI::App* sub, Options& o) {
  sub->add_option("--input", o.input, "Input file (JSON lines)");
  sub->add_option("--output", o.output, "Output file (default: standard output)");
  sub->add_option("--format", o.format, "Report format")->check(CLI::IsMember({"text", "csv", "json-lines"}));
  sub->add_flag("--no-header", o.no_header, "Omit the configuration header");
  sub->add_option("--malformed-threshold", o.malformed_threshold, "Tolerated fraction of malformed corpus lines");
}

void add_tolerances(CLI::App* sub, Options& o) {
  sub->add_option("--rel-tol", o.rel_tol, "Relative tolerance for numeric answers");
  sub->add_option("--abs-tol", o.abs_tol, "Absolute tolerance for numeric answers");
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Options o;
  CLI::App app{"Audit semi-structured reasoning traces", "traceaudit"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  auto* parse = app.add_subcommand("parse", "Parse every record and report step counts and warnings");
  add_io(parse, o);

  auto* validate = app.add_subcommand("validate", "Check the response template; exits 1 on violations");
  add_io(validate, o);
  validate->add_option("--min-functions", o.min_functions, "Minimum declared functions");

  auto* audit = app.add_subcommand("audit", "Run a structured audit suite and print the conditional-accuracy report");
  add_io(audit, o);
  add_tolerances(audit, o);
  audit->add_option("--suite", o.suite, "Audit suite file or shipped suite name");
  audit->add_option("--threads", o.threads, "Worker threads")->check(CLI::PositiveNumber);
  audit->add_option("--min-count", o.min_count, "Minimum labelled fails and passes for a reported row");
  audit->add_flag("--pct-over-all", o.pct_over_all, "Use all traces as the %failed denominator");

  auto* fit = app.add_subcommand("typicality-fit", "Fit a typicality model on step-name patterns");
  add_io(fit, o);
  fit->add_option("--kind", o.kind, "Model kind")->check(CLI::IsMember({"multinomial", "hmm", "hmm-star"}));
  fit->add_option("--ngram", o.ngram, "n-gram order(s), comma separated")->delimiter(',');
  fit->add_option("--states", o.states, "Hidden state count(s), comma separated")->delimiter(',');
  fit->add_option("--alpha", o.alpha, "Dirichlet concentration")->check(CLI::PositiveNumber);
  fit->add_option("--seed", o.seed, "Random seed");
  fit->add_option("--threads", o.threads, "Worker threads for grid search")->check(CLI::PositiveNumber);
  fit->add_option("--max-iter", o.max_iter, "EM iteration limit");
  fit->add_option("--tol", o.tol, "EM per-token convergence threshold");
  fit->add_option("--restarts", o.restarts, "EM restarts")->check(CLI::PositiveNumber);

  auto* score = app.add_subcommand("typicality-score", "Score a corpus with a fitted model");
  add_io(score, o);
  score->add_option("--model", o.model, "Model file");
  score->add_option("--score-mode", o.score_mode, "total or mean log-probability")
      ->check(CLI::IsMember({"total", "mean"}));

  auto* report = app.add_subcommand("report", "Tertile and abstention report over a scored corpus");
  add_io(report, o);
  add_tolerances(report, o);
  report->add_option("--quantiles", o.quantiles, "Quantile counts, comma separated")->delimiter(',');

  auto* selfcons = app.add_subcommand("selfcons", "Compare vanilla and audit-guided self-consistency");
  add_io(selfcons, o);
  add_tolerances(selfcons, o);
  selfcons->add_option("--k", o.k, "Sampling budgets, comma separated")->delimiter(',');

  auto* synth = app.add_subcommand("synth", "Generate a synthetic rule-calculator corpus");
  add_io(synth, o);
  synth->add_option("--count", o.count, "Number of records");
  synth->add_option("--flaw", o.flaws, "Flaw injection as kind=rate (repeatable)");
  synth->add_option("--seed", o.seed, "Random seed");
  synth->add_option("--min-rules", o.min_rules, "Fewest rules per record");
  synth->add_option("--max-rules", o.max_rules, "Most rules per record");
  synth->add_option("--base-error-rate", o.base_error_rate, "Rate of misread values in clean records");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*parse) return cmd_parse(o, out, err);
    if (*validate) return cmd_validate(o, out, err);
    if (*audit) return cmd_audit(o, out, err);
    if (*fit) return cmd_typicality_fit(o, out, err);
    if (*score) return cmd_typicality_score(o, out, err);
    if (*report) return cmd_report(o, out, err);
    if (*selfcons) return cmd_selfcons(o, out, err);
    if (*synth) return cmd_synth(o, out, err);
  } catch (const CommandFailure& f) {
    err << "error: " << f.message << '\n';
    return f.code;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  }
  return kExitUsage;
}

}  // namespace traceaudit
