// SPDX-License-Identifier: Apache-2.0
#include "traceaudit/corpus.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>

#include "traceaudit/errors.hpp"
#include "traceaudit/format.hpp"
#include "traceaudit/literal.hpp"
#include "traceaudit/rng.hpp"

namespace traceaudit {

using nlohmann::ordered_json;

bool CorpusRecord::has_flaw(std::string_view label) const {
  return std::find(flaw_labels.begin(), flaw_labels.end(), label) != flaw_labels.end();
}

// ------------------------------------------------------------------ records

namespace {

std::optional<std::string> optional_string(const ordered_json& obj, const char* key) {
  auto it = obj.find(key);
  if (it == obj.end() || it->is_null()) return std::nullopt;
  if (it->is_string()) return it->get<std::string>();
  if (it->is_number_integer()) return std::to_string(it->get<std::int64_t>());
  if (it->is_number()) return format_real(it->get<double>());
  throw SchemaError(key, "expected a string");
}

std::string dump_line(const ordered_json& j) { return j.dump(-1, ' ', false, ordered_json::error_handler_t::replace); }

}  // namespace

CorpusRecord record_from_json(const ordered_json& obj) {
  if (!obj.is_object()) throw SchemaError("<record>", "expected an object");
  CorpusRecord r;
  auto raw = obj.find("raw_text");
  if (raw == obj.end() || !raw->is_string()) throw SchemaError("raw_text", "missing or not a string");
  r.raw_text = raw->get<std::string>();
  r.id = optional_string(obj, "id").value_or("");
  r.task = optional_string(obj, "task").value_or("");
  r.predicted_answer = optional_string(obj, "predicted_answer");
  r.gold_answer = optional_string(obj, "gold_answer");
  if (auto it = obj.find("correct"); it != obj.end() && !it->is_null()) {
    if (!it->is_boolean()) throw SchemaError("correct", "expected a boolean");
    r.correct = it->get<bool>();
  }
  if (auto it = obj.find("flaw_labels"); it != obj.end() && !it->is_null()) {
    if (!it->is_array()) throw SchemaError("flaw_labels", "expected an array of strings");
    for (const auto& f : *it) {
      if (!f.is_string()) throw SchemaError("flaw_labels", "expected an array of strings");
      r.flaw_labels.push_back(f.get<std::string>());
    }
  }
  if (auto it = obj.find("metadata"); it != obj.end() && !it->is_null()) {
    if (!it->is_object()) throw SchemaError("metadata", "expected an object");
    for (auto m = it->begin(); m != it->end(); ++m) {
      if (m.value().is_string()) {
        r.metadata[m.key()] = m.value().get<std::string>();
      } else {
        r.metadata[m.key()] = dump_line(m.value());
      }
    }
  }
  return r;
}

ordered_json record_to_json(const CorpusRecord& r) {
  ordered_json j;
  j["id"] = r.id;
  j["task"] = r.task;
  j["raw_text"] = r.raw_text;
  j["predicted_answer"] = r.predicted_answer ? ordered_json(*r.predicted_answer) : ordered_json(nullptr);
  j["gold_answer"] = r.gold_answer ? ordered_json(*r.gold_answer) : ordered_json(nullptr);
  j["correct"] = r.correct ? ordered_json(*r.correct) : ordered_json(nullptr);
  j["flaw_labels"] = r.flaw_labels;
  j["metadata"] = ordered_json::object();
  for (const auto& [k, v] : r.metadata) j["metadata"][k] = v;
  return j;
}

CorpusLoad read_corpus(std::istream& in, double max_malformed_fraction) {
  CorpusLoad out;
  std::string line;
  std::size_t lineno = 0;
  std::size_t nonblank = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    ordered_json obj;
    try {
      obj = ordered_json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      ++nonblank;
      out.errors.push_back({lineno, e.what()});
      continue;
    }
    if (nonblank == 0 && !out.header && obj.is_object() && obj.size() == 1 && obj.contains("header")) {
      out.header = obj["header"];
      continue;
    }
    ++nonblank;
    try {
      auto rec = record_from_json(obj);
      if (rec.id.empty()) rec.id = "line-" + std::to_string(lineno);
      out.records.push_back(std::move(rec));
    } catch (const SchemaError& e) {
      out.errors.push_back({lineno, e.what()});
    }
  }
  if (!out.errors.empty() &&
      static_cast<double>(out.errors.size()) > max_malformed_fraction * static_cast<double>(nonblank)) {
    throw TooManyMalformed(out.errors.size(), nonblank, max_malformed_fraction);
  }
  return out;
}

CorpusLoad load_corpus(const std::filesystem::path& path, double max_malformed_fraction) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read corpus " + path.string());
  return read_corpus(f, max_malformed_fraction);
}

void write_corpus(std::ostream& out, const std::vector<CorpusRecord>& records,
                  const std::optional<ordered_json>& header) {
  if (header) out << dump_line(ordered_json{{"header", *header}}) << '\n';
  for (const auto& r : records) out << dump_line(record_to_json(r)) << '\n';
}

void save_corpus(const std::filesystem::path& path, const std::vector<CorpusRecord>& records,
                 const std::optional<ordered_json>& header) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write corpus " + path.string());
  write_corpus(f, records, header);
  if (!f) throw IoError("write failed for " + path.string());
}

bool judge_correct(std::string_view predicted, std::string_view gold, const EquivalencePolicy& policy) {
  return answers_equivalent(predicted, gold, policy);
}

// -------------------------------------------------------------------- pools

std::vector<SamplePool> read_pools(std::istream& in) {
  std::vector<SamplePool> pools;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = "line " + std::to_string(lineno);
    ordered_json obj;
    try {
      obj = ordered_json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw SchemaError(where, e.what());
    }
    if (obj.is_object() && obj.size() == 1 && obj.contains("header")) continue;
    if (!obj.is_object()) throw SchemaError(where, "expected an object");
    SamplePool p;
    p.question_id = optional_string(obj, "id").value_or("line-" + std::to_string(lineno));
    p.gold = optional_string(obj, "gold_answer").value_or("");
    auto samples = obj.find("samples");
    if (samples == obj.end() || !samples->is_array()) throw SchemaError(where + ".samples", "missing or not an array");
    for (std::size_t i = 0; i < samples->size(); ++i) {
      const auto& s = (*samples)[i];
      const std::string spath = where + ".samples[" + std::to_string(i) + "]";
      if (!s.is_object()) throw SchemaError(spath, "expected an object");
      Sample sample;
      try {
        sample.answer = optional_string(s, "answer").value_or("");
        sample.trace_ref = optional_string(s, "trace_ref");
      } catch (const SchemaError& e) {
        throw SchemaError(spath + "." + e.field(), "expected a string");
      }
      if (auto it = s.find("typicality_score"); it != s.end() && !it->is_null()) {
        if (!it->is_number()) throw SchemaError(spath + ".typicality_score", "expected a number");
        sample.typicality_score = it->get<double>();
      }
      p.samples.push_back(std::move(sample));
    }
    pools.push_back(std::move(p));
  }
  return pools;
}

std::vector<SamplePool> load_pools(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read pool file " + path.string());
  return read_pools(f);
}

void write_pools(std::ostream& out, const std::vector<SamplePool>& pools, const std::optional<ordered_json>& header) {
  if (header) out << dump_line(ordered_json{{"header", *header}}) << '\n';
  for (const auto& p : pools) {
    ordered_json j;
    j["id"] = p.question_id;
    j["gold_answer"] = p.gold;
    j["samples"] = ordered_json::array();
    for (const auto& s : p.samples) {
      ordered_json sj;
      sj["answer"] = s.answer;
      sj["typicality_score"] = s.typicality_score ? ordered_json(*s.typicality_score) : ordered_json(nullptr);
      if (s.trace_ref) sj["trace_ref"] = *s.trace_ref;
      j["samples"].push_back(std::move(sj));
    }
    out << dump_line(j) << '\n';
  }
}

// ---------------------------------------------------------------- synthesis

const char* to_string(FlawKind kind) {
  switch (kind) {
    case FlawKind::SkipRule: return "skip_rule";
    case FlawKind::DoubleSum: return "double_sum";
    case FlawKind::WrongArity: return "wrong_arity";
    case FlawKind::ArithError: return "arith_error";
    case FlawKind::ShuffleSteps: return "shuffle_steps";
  }
  return "?";
}

FlawKind parse_flaw_kind(std::string_view name) {
  for (auto k : {FlawKind::SkipRule, FlawKind::DoubleSum, FlawKind::WrongArity, FlawKind::ArithError,
                 FlawKind::ShuffleSteps}) {
    if (name == to_string(k)) return k;
  }
  throw SchemaError("flaw", "unknown flaw kind '" + std::string(name) + "'");
}

namespace {

struct RuleTemplate {
  const char* text;
  const char* field;
  const char* unit;
  double lo, hi;
  double threshold;
  bool greater;  // met when value > threshold, else when value < threshold
  int points;
  int decimals;
  // Alternative unit reported in the note, alt = value * scale + offset.
  const char* alt_unit;
  double scale, offset;
};

constexpr std::array<RuleTemplate, 12> kRules = {{
    {"heart rate > 90 beats/min", "heart_rate", "beats/min", 55, 130, 90, true, 1, 0, nullptr, 1, 0},
    {"temperature > 38.0 C", "temperature", "C", 35.5, 40.5, 38.0, true, 1, 1, "F", 1.8, 32},
    {"respiratory rate > 20 breaths/min", "respiratory_rate", "breaths/min", 10, 32, 20, true, 1, 0, nullptr, 1, 0},
    {"age >= 65 years", "age", "years", 18, 95, 64.5, true, 1, 0, nullptr, 1, 0},
    {"systolic blood pressure < 100 mmHg", "systolic_bp", "mmHg", 75, 170, 100, false, 2, 0, "kPa", 0.133322, 0},
    {"white blood cell count > 12 x10^9/L", "wbc", "x10^9/L", 3, 20, 12, true, 1, 1, nullptr, 1, 0},
    {"serum creatinine > 1.5 mg/dL", "creatinine", "mg/dL", 0.5, 3.5, 1.5, true, 2, 1, "umol/L", 88.4, 0},
    {"glucose > 180 mg/dL", "glucose", "mg/dL", 70, 320, 180, true, 1, 0, "mmol/L", 0.0555, 0},
    {"hemoglobin < 10 g/dL", "hemoglobin", "g/dL", 6, 17, 10, false, 1, 1, "g/L", 10, 0},
    {"oxygen saturation < 92 %", "spo2", "%", 82, 100, 92, false, 2, 0, nullptr, 1, 0},
    {"platelet count < 100 x10^9/L", "platelets", "x10^9/L", 20, 400, 100, false, 1, 0, nullptr, 1, 0},
    {"weight > 100 kg", "weight", "kg", 45, 150, 100, true, 1, 1, "lb", 2.20462, 0},
}};

double round_to(double v, int decimals) {
  const double f = std::pow(10.0, decimals);
  return std::round(v * f) / f;
}

bool rule_met(const RuleTemplate& t, double v) { return t.greater ? v > t.threshold : v < t.threshold; }

/// A value on the requested side of the threshold, away from it by at least
/// one display unit.
double value_on_side(const RuleTemplate& t, bool met, Random& rng) {
  const double step = std::pow(10.0, -t.decimals);
  const bool above = met == t.greater;
  const double lo = above ? t.threshold + step : t.lo;
  const double hi = above ? t.hi : t.threshold - step;
  double v = round_to(lo + (hi - lo) * rng.uniform(), t.decimals);
  if (above && v <= t.threshold) v = round_to(t.threshold + step, t.decimals);
  if (!above && v >= t.threshold) v = round_to(t.threshold - step, t.decimals);
  return v;
}

std::string describe_value(const char* field, double v, int decimals, const char* unit) {
  return std::string(field) + " = " + format_fixed(v, decimals) + " " + unit;
}

struct RuleState {
  const RuleTemplate* t = nullptr;
  double true_value = 0.0;
  double read_value = 0.0;
  bool convert = false;
};

LiteralValue str(std::string s) { return LiteralValue::string(std::move(s)); }

Step make_step(std::string name, std::vector<LiteralValue> args, LiteralValue ret) {
  Step s;
  s.name = std::move(name);
  for (std::size_t i = 0; i < args.size(); ++i) s.raw_args += (i ? ", " : "") + args[i].render();
  s.raw_ret = ret.render();
  s.args = std::move(args);
  s.ret = std::move(ret);
  return s;
}

std::string partial_program(const StepVocabulary& v) {
  std::string out;
  auto decl = [&](const std::string& name, const char* sig, const char* doc) {
    out += "@traced\ndef " + name + sig + "\n \"\"\"" + doc + "\n \"\"\"\n ...\n\n\n\n";
  };
  decl(v.analyze, "(note: str) -> tuple[list[str], str, str]:",
       "Extract the scoring rules, the patient note and the question from the input.");
  decl(v.get_data, "(note: str, rule: str) -> str:", "Find the patient value needed by one rule.");
  decl(v.convert, "(data: str) -> str:", "Convert a patient value to the unit used by the rule.");
  decl(v.evaluate, "(rule: str, data: str) -> int:", "Return the points a rule contributes.");
  decl(v.accumulate, "(score: int, points: int) -> int:", "Add a rule's points to the running score.");
  decl(v.sum, "(points: list[int]) -> int:", "Return the total score.");
  return out;
}

CorpusRecord generate_one(const SynthSchema& schema, const std::vector<FlawSpec>& flaws, std::uint64_t seed,
                          std::size_t index) {
  Random rng(derive_seed(seed, "synth", index));
  const auto& sv = schema.steps;

  // Choose distinct rules.
  const auto n_rules =
      static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(schema.min_rules),
                                               static_cast<std::int64_t>(schema.max_rules)));
  std::array<std::size_t, kRules.size()> order{};
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (std::size_t i = 0; i < n_rules; ++i) {
    const auto j = static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(i),
                                                            static_cast<std::int64_t>(order.size() - 1)));
    std::swap(order[i], order[j]);
  }
  std::vector<RuleState> rules(n_rules);
  for (std::size_t i = 0; i < n_rules; ++i) {
    auto& r = rules[i];
    r.t = &kRules[order[i]];
    r.true_value = value_on_side(*r.t, rng.bernoulli(0.5), rng);
    r.convert = r.t->alt_unit != nullptr && rng.bernoulli(schema.convert_rate);
  }

  // Flaw selection: one uniform draw against cumulative rates.
  std::optional<FlawKind> flaw;
  {
    const double u = rng.uniform();
    double acc = 0.0;
    for (const auto& f : flaws) {
      acc += f.rate;
      if (u < acc) {
        flaw = f.kind;
        break;
      }
    }
  }
  const bool base_error = rng.bernoulli(schema.base_error_rate);
  const auto pick = [&] { return static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(n_rules) - 1)); };
  const std::size_t target = pick();
  const std::int64_t arith_offset = std::array<std::int64_t, 4>{-2, -1, 1, 2}[static_cast<std::size_t>(rng.uniform_int(0, 3))];

  // Flaws that remove or repeat a rule need it to contribute points.
  if (flaw == FlawKind::SkipRule || flaw == FlawKind::DoubleSum) {
    auto& r = rules[target];
    if (!rule_met(*r.t, r.true_value)) r.true_value = value_on_side(*r.t, true, rng);
  }
  for (auto& r : rules) r.read_value = r.true_value;
  const bool misread = flaw == FlawKind::WrongArity || flaw == FlawKind::ShuffleSteps || (!flaw && base_error);
  if (misread) {
    auto& r = rules[target];
    r.read_value = value_on_side(*r.t, !rule_met(*r.t, r.true_value), rng);
  }

  std::int64_t gold = 0;
  for (const auto& r : rules) gold += rule_met(*r.t, r.true_value) ? r.t->points : 0;

  // Patient note and question.
  std::string note = "Patient note:";
  for (std::size_t i = 0; i < n_rules; ++i) {
    const auto& r = rules[i];
    const double shown = r.convert ? round_to(r.true_value * r.t->scale + r.t->offset, r.t->decimals + 1) : r.true_value;
    note += std::string(i ? "," : "") + " " + r.t->field + " " +
            format_fixed(shown, r.convert ? r.t->decimals + 1 : r.t->decimals) + " " +
            (r.convert ? r.t->alt_unit : r.t->unit);
  }
  note += ".";
  const std::string question = "What is the patient's score?";
  std::vector<LiteralValue> rule_texts;
  for (const auto& r : rules) rule_texts.push_back(str(r.t->text));

  ReasoningTrace trace;
  std::vector<LiteralValue> outputs = {LiteralValue::list(rule_texts)};
  if (flaw != FlawKind::WrongArity) outputs.push_back(str(note));
  outputs.push_back(str(question));
  trace.steps.push_back(make_step(sv.analyze, {str(note + " " + question)}, LiteralValue::tuple(outputs)));

  std::vector<LiteralValue> points;
  std::int64_t running = 0;
  std::int64_t double_points = 0;
  for (std::size_t i = 0; i < n_rules; ++i) {
    if (flaw == FlawKind::SkipRule && i == target) continue;
    const auto& r = rules[i];
    const auto& t = *r.t;
    std::vector<Step> block;
    std::string data;
    if (r.convert) {
      const int dec = t.decimals + 1;
      const double alt = round_to(r.read_value * t.scale + t.offset, dec);
      const std::string raw = describe_value(t.field, alt, dec, t.alt_unit);
      data = describe_value(t.field, r.read_value, t.decimals, t.unit);
      block.push_back(make_step(sv.get_data, {str(note), str(t.text)}, str(raw)));
      block.push_back(make_step(sv.convert, {str(raw)}, str(data)));
    } else {
      data = describe_value(t.field, r.read_value, t.decimals, t.unit);
      block.push_back(make_step(sv.get_data, {str(note), str(t.text)}, str(data)));
    }
    const std::int64_t p = rule_met(t, r.read_value) ? t.points : 0;
    Step eval = make_step(sv.evaluate, {str(t.text), str(data)}, LiteralValue::integer(p));
    if (flaw == FlawKind::ShuffleSteps && i == target) {
      block.insert(block.begin(), std::move(eval));
    } else {
      block.push_back(std::move(eval));
    }
    block.push_back(make_step(sv.accumulate, {LiteralValue::integer(running), LiteralValue::integer(p)},
                              LiteralValue::integer(running + p)));
    running += p;
    points.push_back(LiteralValue::integer(p));
    if (flaw == FlawKind::DoubleSum && i == target) double_points = p;
    for (auto& s : block) trace.steps.push_back(std::move(s));
  }
  if (flaw == FlawKind::DoubleSum) points.push_back(LiteralValue::integer(double_points));
  std::int64_t total = 0;
  for (const auto& p : points) total += p.as_integer();
  if (flaw == FlawKind::ArithError) total += (total + arith_offset < 0) ? -arith_offset : arith_offset;
  trace.steps.push_back(make_step(sv.sum, {LiteralValue::list(points)}, LiteralValue::integer(total)));
  for (std::size_t i = 0; i < trace.steps.size(); ++i) trace.steps[i].index = i;

  CorpusRecord rec;
  char id[32];
  std::snprintf(id, sizeof id, "synth-%06zu", index + 1);
  rec.id = id;
  rec.task = schema.task;
  rec.raw_text = "<think>\n<partial_program>\n" + partial_program(sv) + "</partial_program>\n\n<program_trace>\n" +
                 render_trace(trace) + "</program_trace>\n</think>\n<answer>\n" + std::to_string(total) +
                 "\n</answer>";
  rec.predicted_answer = std::to_string(total);
  rec.gold_answer = std::to_string(gold);
  rec.correct = total == gold;
  if (flaw) rec.flaw_labels.push_back(to_string(*flaw));
  rec.metadata["n_rules"] = std::to_string(n_rules);
  if (misread) rec.metadata["misread_rule"] = std::to_string(target);
  return rec;
}

}  // namespace

std::vector<CorpusRecord> synth_generate(const SynthSchema& schema, std::size_t count,
                                         const std::vector<FlawSpec>& flaws, std::uint64_t seed) {
  if (schema.min_rules == 0) throw SchemaError("min_rules", "must be at least 1");
  if (schema.min_rules > schema.max_rules) throw SchemaError("max_rules", "smaller than min_rules");
  if (schema.max_rules > kRules.size()) {
    throw SchemaError("max_rules", "at most " + std::to_string(kRules.size()) + " distinct rules are available");
  }
  for (double r : {schema.convert_rate, schema.base_error_rate}) {
    if (!(r >= 0.0 && r <= 1.0)) throw SchemaError("rate", "rates must lie in [0, 1]");
  }
  double total = 0.0;
  for (const auto& f : flaws) {
    if (!(f.rate >= 0.0 && f.rate <= 1.0)) throw SchemaError(std::string("flaws.") + to_string(f.kind), "rate must lie in [0, 1]");
    total += f.rate;
  }
  if (total > 1.0 + 1e-12) throw SchemaError("flaws", "rates sum to more than 1");
  for (const std::string* name : {&schema.steps.analyze, &schema.steps.get_data, &schema.steps.convert,
                                  &schema.steps.evaluate, &schema.steps.accumulate, &schema.steps.sum}) {
    if (!is_identifier(*name)) throw SchemaError("steps", "'" + *name + "' is not an identifier");
  }

  std::vector<CorpusRecord> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(generate_one(schema, flaws, seed, i));
  return out;
}

}  // namespace traceaudit
