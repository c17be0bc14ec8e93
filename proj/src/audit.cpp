// SPDX-License-Identifier: Apache-2.0
#include "traceaudit/audit.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <fstream>
#include <set>
#include <sstream>
#include <thread>

#include "traceaudit/errors.hpp"
#include "traceaudit/format.hpp"
#include "traceaudit/stats.hpp"

namespace traceaudit {

using nlohmann::ordered_json;

const char* to_string(Truth t) {
  switch (t) {
    case Truth::False: return "false";
    case Truth::True: return "true";
    case Truth::Undefined: return "undefined";
  }
  return "?";
}

const char* to_string(Outcome o) {
  switch (o) {
    case Outcome::Pass: return "pass";
    case Outcome::Fail: return "fail";
    case Outcome::NotApplicable: return "not_applicable";
  }
  return "?";
}

namespace {

const char* cmp_symbol(Cmp c) {
  switch (c) {
    case Cmp::Eq: return "==";
    case Cmp::Ne: return "!=";
    case Cmp::Lt: return "<";
    case Cmp::Le: return "<=";
    case Cmp::Gt: return ">";
    case Cmp::Ge: return ">=";
  }
  return "?";
}

bool compare(std::int64_t a, Cmp c, std::int64_t b) {
  switch (c) {
    case Cmp::Eq: return a == b;
    case Cmp::Ne: return a != b;
    case Cmp::Lt: return a < b;
    case Cmp::Le: return a <= b;
    case Cmp::Gt: return a > b;
    case Cmp::Ge: return a >= b;
  }
  return false;
}

Truth from_bool(bool b) { return b ? Truth::True : Truth::False; }

std::string describe_ref(const OutputRef& r) {
  std::string s = r.step;
  switch (r.occurrence.kind) {
    case Occurrence::Kind::First: break;
    case Occurrence::Kind::Last: s += "@last"; break;
    case Occurrence::Kind::Index: s += "@" + std::to_string(r.occurrence.index); break;
  }
  if (r.field) s += "[" + std::to_string(*r.field) + "]";
  return s;
}

}  // namespace

std::string Predicate::describe() const {
  switch (op) {
    case Op::StepCount:
      return "step_count(" + ref.step + ") " + cmp_symbol(cmp) + " " +
             (collection ? "collection_len(" + describe_ref(*collection) + ")" : std::to_string(value));
    case Op::OutputKind: return "output_kind(" + describe_ref(ref) + ") is " + kind;
    case Op::OutputMatches: return "output_matches(" + describe_ref(ref) + ", /" + pattern + "/)";
    case Op::OutputArity:
      return "output_arity(" + describe_ref(ref) + ") " + cmp_symbol(cmp) + " " + std::to_string(value);
    case Op::ArithChainConsistent:
      return std::string("arith_chain_consistent(") + ref.step + ", " +
             (mode == arith::ChainMode::AdjacentPairs ? "adjacent" : "first_to_last") + ")";
    case Op::NumericSumConsistent: {
      std::string s = "numeric_sum_consistent(";
      for (std::size_t i = 0; i < contributors.size(); ++i) s += (i ? "+" : "") + contributors[i];
      return s + " -> " + describe_ref(ref) + ")";
    }
    case Op::And:
    case Op::Or: {
      std::string s = op == Op::And ? "and(" : "or(";
      for (std::size_t i = 0; i < children.size(); ++i) s += (i ? ", " : "") + children[i].describe();
      return s + ")";
    }
    case Op::Not: return "not(" + (children.empty() ? std::string() : children[0].describe()) + ")";
  }
  return "?";
}

// ----------------------------------------------------------------- evaluation

namespace {

const Step* find_step(const ReasoningTrace& trace, const std::string& name, const Occurrence& occ) {
  auto steps = trace.steps_named(name);
  if (steps.empty()) return nullptr;
  switch (occ.kind) {
    case Occurrence::Kind::First: return steps.front();
    case Occurrence::Kind::Last: return steps.back();
    case Occurrence::Kind::Index: {
      const auto n = static_cast<std::int64_t>(steps.size());
      const std::int64_t i = occ.index < 0 ? n + occ.index : occ.index;
      if (i < 0 || i >= n) return nullptr;
      return steps[static_cast<std::size_t>(i)];
    }
  }
  return nullptr;
}

/// The referenced value, or nullptr when the return is unparsed, the field
/// does not exist, or the output is not a collection when a field is given.
const LiteralValue* select_output(const Step& step, const std::optional<std::size_t>& field) {
  if (!step.ret) return nullptr;
  if (!field) return &*step.ret;
  if (!step.ret->is_collection()) return nullptr;
  const auto& items = step.ret->items();
  if (*field >= items.size()) return nullptr;
  return &items[*field];
}

bool kind_matches(const LiteralValue& v, const std::string& kind) {
  using K = LiteralValue::Kind;
  if (kind == "number") return v.is_number();
  if (kind == "integer") return v.kind() == K::Integer;
  if (kind == "real") return v.kind() == K::Real;
  if (kind == "string") return v.kind() == K::String;
  if (kind == "boolean") return v.kind() == K::Boolean;
  if (kind == "none") return v.kind() == K::None;
  if (kind == "list") return v.kind() == K::List;
  if (kind == "tuple") return v.kind() == K::Tuple;
  if (kind == "collection") return v.is_collection();
  return false;
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

Truth eval(const Predicate& p, const ReasoningTrace& trace) {
  using Op = Predicate::Op;
  switch (p.op) {
    case Op::StepCount: {
      const auto lhs = static_cast<std::int64_t>(trace.count(p.ref.step));
      std::int64_t rhs = p.value;
      if (p.collection) {
        const Step* s = find_step(trace, p.collection->step, p.collection->occurrence);
        if (!s) return Truth::Undefined;
        const LiteralValue* v = select_output(*s, p.collection->field);
        if (!v || !v->is_collection()) return Truth::Undefined;
        rhs = static_cast<std::int64_t>(v->items().size());
      }
      return from_bool(compare(lhs, p.cmp, rhs));
    }
    case Op::OutputKind: {
      const Step* s = find_step(trace, p.ref.step, p.ref.occurrence);
      if (!s) return Truth::Undefined;
      const LiteralValue* v = select_output(*s, p.ref.field);
      return from_bool(v && kind_matches(*v, p.kind));
    }
    case Op::OutputMatches: {
      const Step* s = find_step(trace, p.ref.step, p.ref.occurrence);
      if (!s) return Truth::Undefined;
      std::string text;
      if (p.ref.field) {
        const LiteralValue* v = select_output(*s, p.ref.field);
        if (!v) return Truth::False;
        text = v->kind() == LiteralValue::Kind::String ? v->as_string() : v->render();
      } else if (s->ret && s->ret->kind() == LiteralValue::Kind::String) {
        text = s->ret->as_string();
      } else {
        text = trim(s->raw_ret);
      }
      return from_bool(std::regex_search(text, *p.regex));
    }
    case Op::OutputArity: {
      const Step* s = find_step(trace, p.ref.step, p.ref.occurrence);
      if (!s) return Truth::Undefined;
      const LiteralValue* v = select_output(*s, p.ref.field);
      if (!v) return Truth::False;
      const std::int64_t arity =
          v->kind() == LiteralValue::Kind::Tuple ? static_cast<std::int64_t>(v->items().size()) : 1;
      return from_bool(compare(arity, p.cmp, p.value));
    }
    case Op::ArithChainConsistent: {
      const auto steps = trace.steps_named(p.ref.step);
      if (steps.empty()) return Truth::Undefined;
      std::vector<arith::EquationPair> pairs;
      for (const Step* s : steps) {
        arith::EquationPair pair;
        if (s->args && !s->args->empty() && (*s->args)[0].kind() == LiteralValue::Kind::String) {
          pair.before = (*s->args)[0].as_string();
        } else {
          pair.before = s->raw_args;
        }
        if (s->ret && s->ret->kind() == LiteralValue::Kind::String) {
          pair.after = s->ret->as_string();
        } else {
          pair.after = s->raw_ret;
        }
        pairs.push_back(std::move(pair));
      }
      switch (arith::check_equation_chain(pairs, p.mode, p.tol)) {
        case arith::TriState::Consistent: return Truth::True;
        case arith::TriState::Inconsistent: return Truth::False;
        case arith::TriState::NotApplicable: return Truth::Undefined;
      }
      return Truth::Undefined;
    }
    case Op::NumericSumConsistent: {
      const Step* total_step = find_step(trace, p.ref.step, p.ref.occurrence);
      if (!total_step) return Truth::Undefined;
      const LiteralValue* total = select_output(*total_step, p.ref.field);
      if (!total || !total->is_number()) return Truth::False;
      double sum = 0.0;
      for (const auto& s : trace.steps) {
        if (std::find(p.contributors.begin(), p.contributors.end(), s.name) == p.contributors.end()) continue;
        if (!s.ret || !s.ret->is_number()) return Truth::False;
        sum += s.ret->as_number();
      }
      const double t = total->as_number();
      return from_bool(std::abs(sum - t) <= p.tol * std::max(1.0, std::abs(t)));
    }
    case Op::And: {
      Truth out = Truth::True;
      for (const auto& c : p.children) {
        const Truth v = eval(c, trace);
        if (v == Truth::False) return Truth::False;
        if (v == Truth::Undefined) out = Truth::Undefined;
      }
      return out;
    }
    case Op::Or: {
      Truth out = Truth::False;
      for (const auto& c : p.children) {
        const Truth v = eval(c, trace);
        if (v == Truth::True) return Truth::True;
        if (v == Truth::Undefined) out = Truth::Undefined;
      }
      return out;
    }
    case Op::Not: {
      const Truth v = eval(p.children.at(0), trace);
      if (v == Truth::Undefined) return v;
      return from_bool(v == Truth::False);
    }
  }
  return Truth::Undefined;
}

/// First primitive responsible for `p` evaluating to `target`.
const Predicate* culprit(const Predicate& p, const ReasoningTrace& trace, Truth target) {
  using Op = Predicate::Op;
  if (p.op == Op::Not) return culprit(p.children.at(0), trace, target == Truth::False ? Truth::True : Truth::False);
  if (p.op == Op::And || p.op == Op::Or) {
    for (const auto& c : p.children) {
      if (eval(c, trace) == target) {
        if (const Predicate* found = culprit(c, trace, target)) return found;
      }
    }
    return nullptr;
  }
  return eval(p, trace) == target ? &p : nullptr;
}

}  // namespace

Truth evaluate_predicate(const Predicate& p, const ReasoningTrace& trace) { return eval(p, trace); }

AuditVerdict evaluate_audit(const AuditSpec& spec, const ReasoningTrace& trace) {
  AuditVerdict v{spec.id, Outcome::NotApplicable, std::nullopt};
  if (eval(spec.applicability, trace) != Truth::True) return v;
  const Truth result = eval(spec.assertion, trace);
  if (result == Truth::Undefined) return v;
  if (result == Truth::True) {
    v.outcome = Outcome::Pass;
    return v;
  }
  v.outcome = Outcome::Fail;
  const Predicate* c = culprit(spec.assertion, trace, Truth::False);
  v.detail = (c ? c : &spec.assertion)->describe();
  return v;
}

// -------------------------------------------------------------------- parsing

namespace {

std::string join_path(const std::string& path, const std::string& key) { return path + "." + key; }

/// Replaces "$name" strings by parameter values, recursively.
ordered_json substitute(const ordered_json& v, const ordered_json& params, const std::string& path) {
  if (v.is_string()) {
    const auto& s = v.get_ref<const std::string&>();
    if (s.size() > 1 && s[0] == '$') {
      const auto name = s.substr(1);
      auto it = params.find(name);
      if (it == params.end()) throw SchemaError(path, "unknown parameter '" + name + "'");
      return *it;
    }
    return v;
  }
  if (v.is_object()) {
    ordered_json out = ordered_json::object();
    for (auto it = v.begin(); it != v.end(); ++it) out[it.key()] = substitute(it.value(), params, join_path(path, it.key()));
    return out;
  }
  if (v.is_array()) {
    ordered_json out = ordered_json::array();
    for (std::size_t i = 0; i < v.size(); ++i) out.push_back(substitute(v[i], params, path + "[" + std::to_string(i) + "]"));
    return out;
  }
  return v;
}

class ArgReader {
 public:
  ArgReader(const ordered_json& args, std::string path) : args_(args), path_(std::move(path)) {
    if (!args_.is_object()) throw SchemaError(path_, "expected an object");
  }

  bool has(const std::string& key) const { return args_.contains(key); }

  const ordered_json& raw(const std::string& key) {
    used_.insert(key);
    auto it = args_.find(key);
    if (it == args_.end()) throw SchemaError(join_path(path_, key), "missing field");
    return *it;
  }

  std::string string(const std::string& key) {
    const auto& v = raw(key);
    if (!v.is_string()) throw SchemaError(join_path(path_, key), "expected a string");
    return v.get<std::string>();
  }

  std::string string_or(const std::string& key, const std::string& fallback) {
    return has(key) ? string(key) : (used_.insert(key), fallback);
  }

  std::int64_t integer(const std::string& key) {
    const auto& v = raw(key);
    if (!v.is_number_integer()) throw SchemaError(join_path(path_, key), "expected an integer");
    return v.get<std::int64_t>();
  }

  double number_or(const std::string& key, double fallback) {
    if (!has(key)) return fallback;
    const auto& v = raw(key);
    if (!v.is_number()) throw SchemaError(join_path(path_, key), "expected a number");
    const double d = v.get<double>();
    if (!(d >= 0.0) || !std::isfinite(d)) throw SchemaError(join_path(path_, key), "expected a nonnegative number");
    return d;
  }

  std::string path(const std::string& key) const { return join_path(path_, key); }

  /// Rejects keys that no reader consumed.
  void finish() const {
    for (auto it = args_.begin(); it != args_.end(); ++it) {
      if (!used_.count(it.key())) throw SchemaError(join_path(path_, it.key()), "unknown field");
    }
  }

 private:
  const ordered_json& args_;
  std::string path_;
  std::set<std::string> used_;
};

Cmp parse_cmp(const std::string& s, const std::string& path) {
  if (s == "==" || s == "=" || s == "eq") return Cmp::Eq;
  if (s == "!=" || s == "ne") return Cmp::Ne;
  if (s == "<" || s == "lt") return Cmp::Lt;
  if (s == "<=" || s == "le") return Cmp::Le;
  if (s == ">" || s == "gt") return Cmp::Gt;
  if (s == ">=" || s == "ge") return Cmp::Ge;
  throw SchemaError(path, "unknown comparison '" + s + "'");
}

Occurrence parse_occurrence(ArgReader& r) {
  Occurrence occ;
  if (!r.has("occurrence")) return occ;
  const auto& v = r.raw("occurrence");
  if (v.is_string()) {
    const auto s = v.get<std::string>();
    if (s == "first") return occ;
    if (s == "last") {
      occ.kind = Occurrence::Kind::Last;
      return occ;
    }
    throw SchemaError(r.path("occurrence"), "expected \"first\", \"last\" or an integer");
  }
  if (!v.is_number_integer()) throw SchemaError(r.path("occurrence"), "expected \"first\", \"last\" or an integer");
  occ.kind = Occurrence::Kind::Index;
  occ.index = v.get<std::int64_t>();
  return occ;
}

std::optional<std::size_t> parse_field(ArgReader& r) {
  if (!r.has("field")) return std::nullopt;
  const auto& v = r.raw("field");
  if (!v.is_number_integer() || v.get<std::int64_t>() < 0) {
    throw SchemaError(r.path("field"), "expected a nonnegative integer");
  }
  return v.get<std::size_t>();
}

void require_identifier(const std::string& name, const std::string& path) {
  if (!is_identifier(name)) throw SchemaError(path, "'" + name + "' is not a step name");
}

OutputRef parse_ref(ArgReader& r, const std::string& step_key = "step") {
  OutputRef ref;
  ref.step = r.string(step_key);
  require_identifier(ref.step, r.path(step_key));
  ref.occurrence = parse_occurrence(r);
  ref.field = parse_field(r);
  return ref;
}

const std::set<std::string> kKinds = {"number", "integer", "real", "string", "boolean",
                                      "none",   "list",    "tuple", "collection"};

}  // namespace

Predicate parse_predicate(const ordered_json& node_in, const std::string& path, const ordered_json& parameters) {
  if (!node_in.is_object()) throw SchemaError(path, "predicate must be an object");
  const ordered_json node = substitute(node_in, parameters, path);
  for (auto it = node.begin(); it != node.end(); ++it) {
    if (it.key() != "op" && it.key() != "args") throw SchemaError(join_path(path, it.key()), "unknown field");
  }
  if (!node.contains("op") || !node["op"].is_string()) throw SchemaError(join_path(path, "op"), "missing or not a string");
  const auto op = node["op"].get<std::string>();
  const std::string args_path = join_path(path, "args");
  using Op = Predicate::Op;
  Predicate p;

  if (op == "and" || op == "or" || op == "not") {
    p.op = op == "and" ? Op::And : op == "or" ? Op::Or : Op::Not;
    ordered_json args = node.contains("args") ? node["args"] : ordered_json::array();
    if (p.op == Op::Not && args.is_object()) args = ordered_json::array({args});
    if (!args.is_array()) throw SchemaError(args_path, "expected an array of predicates");
    for (std::size_t i = 0; i < args.size(); ++i) {
      p.children.push_back(parse_predicate(args[i], args_path + "[" + std::to_string(i) + "]", parameters));
    }
    if (p.op == Op::Not && p.children.size() != 1) throw SchemaError(args_path, "not takes exactly one predicate");
    return p;
  }

  if (!node.contains("args")) throw SchemaError(args_path, "missing field");
  ArgReader r(node["args"], args_path);
  if (op == "step_count") {
    p.op = Op::StepCount;
    p.ref.step = r.string("step");
    require_identifier(p.ref.step, r.path("step"));
    p.cmp = parse_cmp(r.string_or("cmp", "=="), r.path("cmp"));
    const bool has_value = r.has("value");
    const bool has_coll = r.has("collection_len");
    if (has_value == has_coll) throw SchemaError(args_path, "exactly one of value or collection_len is required");
    if (has_value) {
      p.value = r.integer("value");
    } else {
      ArgReader c(r.raw("collection_len"), r.path("collection_len"));
      p.collection = parse_ref(c);
      c.finish();
    }
  } else if (op == "output_kind") {
    p.op = Op::OutputKind;
    p.ref = parse_ref(r);
    p.kind = r.string("kind");
    if (!kKinds.count(p.kind)) throw SchemaError(r.path("kind"), "unknown literal kind '" + p.kind + "'");
  } else if (op == "output_matches") {
    p.op = Op::OutputMatches;
    p.ref = parse_ref(r);
    p.pattern = r.string_or("pattern", kNumberPattern);
    try {
      p.regex = std::make_shared<const std::regex>(p.pattern, std::regex::ECMAScript);
    } catch (const std::regex_error& e) {
      throw SchemaError(r.path("pattern"), std::string("bad regular expression: ") + e.what());
    }
  } else if (op == "output_arity") {
    p.op = Op::OutputArity;
    p.ref = parse_ref(r);
    p.cmp = parse_cmp(r.string_or("cmp", "=="), r.path("cmp"));
    p.value = r.integer("value");
  } else if (op == "arith_chain_consistent") {
    p.op = Op::ArithChainConsistent;
    p.ref.step = r.string("step");
    require_identifier(p.ref.step, r.path("step"));
    const auto mode = r.string_or("mode", "adjacent");
    if (mode == "adjacent") {
      p.mode = arith::ChainMode::AdjacentPairs;
    } else if (mode == "first_to_last") {
      p.mode = arith::ChainMode::FirstToLast;
    } else {
      throw SchemaError(r.path("mode"), "expected \"adjacent\" or \"first_to_last\"");
    }
    p.tol = r.number_or("tol", arith::kDefaultRelTol);
  } else if (op == "numeric_sum_consistent") {
    p.op = Op::NumericSumConsistent;
    const auto& contrib = r.raw("contributors");
    if (contrib.is_string()) {
      p.contributors.push_back(contrib.get<std::string>());
    } else if (contrib.is_array() && !contrib.empty()) {
      for (const auto& c : contrib) {
        if (!c.is_string()) throw SchemaError(r.path("contributors"), "expected step names");
        p.contributors.push_back(c.get<std::string>());
      }
    } else {
      throw SchemaError(r.path("contributors"), "expected a step name or a nonempty list of them");
    }
    for (const auto& c : p.contributors) require_identifier(c, r.path("contributors"));
    p.ref = parse_ref(r, "total");
    p.tol = r.number_or("tol", 1e-6);
  } else {
    throw SchemaError(join_path(path, "op"), "unknown predicate '" + op + "'");
  }
  r.finish();
  return p;
}

AuditSpec parse_audit_spec(const ordered_json& node, const std::string& path) {
  if (!node.is_object()) throw SchemaError(path, "audit must be an object");
  static const std::set<std::string> kFields = {"id", "description", "applicability", "assertion", "parameters"};
  for (auto it = node.begin(); it != node.end(); ++it) {
    if (!kFields.count(it.key())) throw SchemaError(join_path(path, it.key()), "unknown field");
  }
  AuditSpec spec;
  if (!node.contains("id") || !node["id"].is_string() || node["id"].get<std::string>().empty()) {
    throw SchemaError(join_path(path, "id"), "missing or not a nonempty string");
  }
  spec.id = node["id"].get<std::string>();
  if (node.contains("description")) {
    if (!node["description"].is_string()) throw SchemaError(join_path(path, "description"), "expected a string");
    spec.description = node["description"].get<std::string>();
  }
  if (node.contains("parameters")) {
    if (!node["parameters"].is_object()) throw SchemaError(join_path(path, "parameters"), "expected an object");
    spec.parameters = node["parameters"];
  }
  if (node.contains("applicability")) {
    spec.applicability = parse_predicate(node["applicability"], join_path(path, "applicability"), spec.parameters);
  } else {
    spec.applicability.op = Predicate::Op::And;  // empty conjunction: always applicable
  }
  if (!node.contains("assertion")) throw SchemaError(join_path(path, "assertion"), "missing field");
  spec.assertion = parse_predicate(node["assertion"], join_path(path, "assertion"), spec.parameters);
  return spec;
}

std::vector<AuditSpec> parse_audit_suite(std::string_view text) {
  if (text.find_first_not_of(" \t\r\n") == std::string_view::npos) return {};
  ordered_json doc;
  try {
    doc = ordered_json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw SchemaError("<document>", e.what());
  }
  const ordered_json* audits = &doc;
  std::string base = "audits";
  if (doc.is_object()) {
    for (auto it = doc.begin(); it != doc.end(); ++it) {
      if (it.key() != "suite" && it.key() != "description" && it.key() != "audits") {
        throw SchemaError(it.key(), "unknown field");
      }
    }
    if (!doc.contains("audits")) throw SchemaError("audits", "missing field");
    audits = &doc["audits"];
  }
  if (!audits->is_array()) throw SchemaError(base, "expected an array");
  std::vector<AuditSpec> out;
  std::set<std::string> ids;
  for (std::size_t i = 0; i < audits->size(); ++i) {
    const std::string path = base + "[" + std::to_string(i) + "]";
    auto spec = parse_audit_spec((*audits)[i], path);
    if (!ids.insert(spec.id).second) throw SchemaError(path + ".id", "duplicate audit id '" + spec.id + "'");
    out.push_back(std::move(spec));
  }
  return out;
}

std::vector<AuditSpec> load_audit_suite(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read audit suite " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_audit_suite(ss.str());
}

// --------------------------------------------------------------------- report

AuditReportRow make_report_row(std::string audit_id, std::string description, std::size_t n_traces,
                               std::size_t n_applicable, std::size_t n_fail_total, std::size_t n_fail,
                               std::size_t correct_fail, std::size_t n_pass, std::size_t correct_pass,
                               const ReportOptions& options) {
  AuditReportRow row;
  row.audit_id = std::move(audit_id);
  row.description = std::move(description);
  row.n_traces = n_traces;
  row.n_applicable = n_applicable;
  row.n_fail_total = n_fail_total;
  row.n_fail = n_fail;
  row.n_pass = n_pass;
  row.correct_fail = correct_fail;
  row.correct_pass = correct_pass;
  const std::size_t denom = options.pct_over_all_traces ? n_traces : n_applicable;
  row.pct_failed = denom ? 100.0 * static_cast<double>(n_fail_total) / static_cast<double>(denom) : 0.0;
  row.acc_failing = n_fail ? static_cast<double>(correct_fail) / static_cast<double>(n_fail) : 0.0;
  row.acc_passing = n_pass ? static_cast<double>(correct_pass) / static_cast<double>(n_pass) : 0.0;
  row.delta = row.acc_passing - row.acc_failing;
  if (n_fail + n_pass > 0) {
    stats::ContingencyTable2x2 t{n_fail - correct_fail, correct_fail, n_pass - correct_pass, correct_pass};
    row.p_value = stats::fisher_exact_two_sided(t);
  }
  return row;
}

std::vector<AuditReportRow> tally_audits(const std::vector<AuditSpec>& suite, const std::vector<AuditedTrace>& corpus,
                                         const ReportOptions& options, std::size_t threads) {
  struct Counts {
    std::size_t applicable = 0, fail_total = 0, fail = 0, correct_fail = 0, pass = 0, correct_pass = 0;
  };
  const std::size_t workers = std::max<std::size_t>(1, std::min(threads, corpus.size()));
  std::vector<std::vector<Counts>> partial(workers, std::vector<Counts>(suite.size()));

  auto work = [&](std::size_t w) {
    auto& counts = partial[w];
    for (std::size_t i = w; i < corpus.size(); i += workers) {
      const auto& item = corpus[i];
      for (std::size_t a = 0; a < suite.size(); ++a) {
        const auto v = evaluate_audit(suite[a], *item.trace);
        if (v.outcome == Outcome::NotApplicable) continue;
        auto& c = counts[a];
        ++c.applicable;
        if (v.outcome == Outcome::Fail) {
          ++c.fail_total;
          if (item.correct) {
            ++c.fail;
            if (*item.correct) ++c.correct_fail;
          }
        } else if (item.correct) {
          ++c.pass;
          if (*item.correct) ++c.correct_pass;
        }
      }
    }
  };
  if (workers == 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(workers);
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        try {
          work(w);
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

  std::vector<AuditReportRow> rows;
  for (std::size_t a = 0; a < suite.size(); ++a) {
    Counts c;
    for (const auto& part : partial) {
      const auto& p = part[a];
      c.applicable += p.applicable;
      c.fail_total += p.fail_total;
      c.fail += p.fail;
      c.correct_fail += p.correct_fail;
      c.pass += p.pass;
      c.correct_pass += p.correct_pass;
    }
    rows.push_back(make_report_row(suite[a].id, suite[a].description, corpus.size(), c.applicable, c.fail_total,
                                   c.fail, c.correct_fail, c.pass, c.correct_pass, options));
  }
  return rows;
}

std::vector<AuditReportRow> run_audit_suite(const std::vector<AuditSpec>& suite,
                                            const std::vector<AuditedTrace>& corpus, const ReportOptions& options,
                                            std::size_t threads) {
  if (corpus.empty()) throw EmptyCorpus();
  auto all = tally_audits(suite, corpus, options, threads);
  std::vector<AuditReportRow> rows;
  for (auto& r : all) {
    if (r.n_fail >= options.min_count && r.n_pass >= options.min_count) rows.push_back(std::move(r));
  }
  std::stable_sort(rows.begin(), rows.end(),
                   [](const AuditReportRow& a, const AuditReportRow& b) { return a.pct_failed < b.pct_failed; });
  return rows;
}

std::string render_audit_report_text(const std::vector<AuditReportRow>& rows) {
  std::vector<std::vector<std::string>> cells;
  cells.push_back({"%Failed", "Failing", "Passing", "Delta", "p-val", "", "description"});
  for (const auto& r : rows) {
    cells.push_back({format_fixed(r.pct_failed, 1), format_fixed(r.acc_failing, 2), format_fixed(r.acc_passing, 2),
                     format_fixed(r.delta, 2), format_general(r.p_value), stats::significance_stars(r.p_value),
                     r.description.empty() ? r.audit_id : r.description});
  }
  std::vector<std::size_t> width(7, 0);
  for (const auto& row : cells) {
    for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
  }
  std::string out;
  for (const auto& row : cells) {
    std::string line;
    for (std::size_t c = 0; c < 5; ++c) line += pad_left(row[c], width[c]) + "  ";
    line += pad_right(row[5], width[5]) + "  " + row[6];
    out += line + "\n";
  }
  return out;
}

std::string render_audit_report_csv(const std::vector<AuditReportRow>& rows, bool header) {
  std::string out;
  if (header) {
    out += "audit_id,pct_failed,acc_failing,acc_passing,delta,p_value,stars,n_applicable,n_fail_total,n_fail,"
           "correct_fail,n_pass,correct_pass,description\n";
  }
  for (const auto& r : rows) {
    out += csv_field(r.audit_id) + "," + format_exact(r.pct_failed) + "," + format_exact(r.acc_failing) + "," +
           format_exact(r.acc_passing) + "," + format_exact(r.delta) + "," + format_exact(r.p_value) + "," +
           stats::significance_stars(r.p_value) + "," + std::to_string(r.n_applicable) + "," +
           std::to_string(r.n_fail_total) + "," + std::to_string(r.n_fail) + "," + std::to_string(r.correct_fail) +
           "," + std::to_string(r.n_pass) + "," + std::to_string(r.correct_pass) + "," + csv_field(r.description) +
           "\n";
  }
  return out;
}

ordered_json audit_row_to_json(const AuditReportRow& r) {
  ordered_json j;
  j["audit_id"] = r.audit_id;
  j["description"] = r.description;
  j["pct_failed"] = r.pct_failed;
  j["acc_failing"] = r.acc_failing;
  j["acc_passing"] = r.acc_passing;
  j["delta"] = r.delta;
  j["p_value"] = r.p_value;
  j["stars"] = stats::significance_stars(r.p_value);
  j["n_traces"] = r.n_traces;
  j["n_applicable"] = r.n_applicable;
  j["n_fail_total"] = r.n_fail_total;
  j["n_fail"] = r.n_fail;
  j["correct_fail"] = r.correct_fail;
  j["n_pass"] = r.n_pass;
  j["correct_pass"] = r.correct_pass;
  return j;
}

}  // namespace traceaudit
