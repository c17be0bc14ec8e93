// SPDX-License-Identifier: Apache-2.0
#include "traceaudit/model_io.hpp"

#include <fstream>
#include <sstream>

#include "traceaudit/errors.hpp"

namespace traceaudit::typicality {

using nlohmann::ordered_json;

namespace {

constexpr const char* kFormatName = "traceaudit-typicality-model";

ordered_json cells_to_json(const std::vector<GridCell>& cells) {
  ordered_json out = ordered_json::array();
  for (const auto& c : cells) {
    ordered_json j;
    j["states"] = c.states;
    j["ngram"] = c.ngram;
    j["skipped"] = c.skipped;
    if (c.skipped) {
      j["skip_reason"] = c.skip_reason;
    } else {
      j["log_likelihood"] = c.log_likelihood;
      j["param_count"] = c.param_count;
      j["n_tokens"] = c.n_tokens;
      j["bic"] = c.bic;
    }
    out.push_back(std::move(j));
  }
  return out;
}

const ordered_json& require(const ordered_json& obj, const std::string& key, const std::string& path) {
  if (!obj.is_object()) throw SchemaError(path, "expected an object");
  auto it = obj.find(key);
  if (it == obj.end()) throw SchemaError(path.empty() ? key : path + "." + key, "missing field");
  return *it;
}

template <typename T>
T get_as(const ordered_json& obj, const std::string& key, const std::string& path) {
  const auto& v = require(obj, key, path);
  try {
    return v.get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(path.empty() ? key : path + "." + key, e.what());
  }
}

std::vector<GridCell> cells_from_json(const ordered_json& arr) {
  if (!arr.is_array()) throw SchemaError("selection.grid", "expected an array");
  std::vector<GridCell> cells;
  for (std::size_t i = 0; i < arr.size(); ++i) {
    const std::string path = "selection.grid[" + std::to_string(i) + "]";
    const auto& j = arr[i];
    GridCell c;
    c.states = get_as<std::size_t>(j, "states", path);
    c.ngram = get_as<std::size_t>(j, "ngram", path);
    c.skipped = get_as<bool>(j, "skipped", path);
    if (c.skipped) {
      c.skip_reason = j.value("skip_reason", "");
    } else {
      c.log_likelihood = get_as<double>(j, "log_likelihood", path);
      c.param_count = get_as<std::size_t>(j, "param_count", path);
      c.n_tokens = get_as<std::size_t>(j, "n_tokens", path);
      c.bic = get_as<double>(j, "bic", path);
    }
    cells.push_back(std::move(c));
  }
  return cells;
}

}  // namespace

ordered_json model_to_json(const StoredModel& stored) {
  ordered_json doc;
  doc["format"] = kFormatName;
  doc["version"] = kModelFormatVersion;
  std::visit(
      [&](const auto& m) {
        using M = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<M, MultinomialModel>) {
          doc["kind"] = "multinomial";
          doc["ngram"] = m.order();
          doc["alpha"] = m.alpha();
          if (m.vocab_size_override()) {
            doc["vocab_size_override"] = *m.vocab_size_override();
          } else {
            doc["vocab_size_override"] = nullptr;
          }
          doc["vocab"] = m.vocab().tokens();
          doc["counts"] = m.counts();
        } else {
          doc["kind"] = "hmm";
          doc["ngram"] = m.order();
          doc["states"] = m.states();
          const auto& o = m.options();
          doc["options"] = {{"seed", o.seed},         {"max_iter", o.max_iter}, {"tol", o.tol},
                            {"restarts", o.restarts}, {"unk_mass", o.unk_mass}};
          doc["vocab"] = m.vocab().tokens();
          doc["initial"] = m.initial();
          doc["transition"] = m.transition();
          doc["emission"] = m.emission();
          doc["training_log_likelihood"] = m.training_history();
        }
      },
      stored.model);
  if (stored.grid) {
    doc["selection"] = {{"chosen", stored.chosen.value_or(0)}, {"grid", cells_to_json(*stored.grid)}};
  }
  return doc;
}

StoredModel model_from_json(const ordered_json& doc) {
  if (get_as<std::string>(doc, "format", "") != kFormatName) throw SchemaError("format", "not a typicality model");
  const int version = get_as<int>(doc, "version", "");
  if (version != kModelFormatVersion) throw SchemaError("version", "unsupported version " + std::to_string(version));
  const auto kind = get_as<std::string>(doc, "kind", "");
  const auto n = get_as<std::size_t>(doc, "ngram", "");
  auto vocab = Vocabulary::from_tokens(get_as<std::vector<std::string>>(doc, "vocab", ""));

  StoredModel out{MultinomialModel{}, std::nullopt, std::nullopt};
  if (kind == "multinomial") {
    std::optional<std::size_t> override;
    if (auto it = doc.find("vocab_size_override"); it != doc.end() && !it->is_null()) {
      override = get_as<std::size_t>(doc, "vocab_size_override", "");
    }
    try {
      out.model = MultinomialModel::from_parameters(std::move(vocab), n, get_as<double>(doc, "alpha", ""),
                                                    get_as<std::vector<std::uint64_t>>(doc, "counts", ""), override);
    } catch (const std::invalid_argument& e) {
      throw SchemaError("alpha", e.what());
    }
  } else if (kind == "hmm") {
    HmmOptions opt;
    if (auto it = doc.find("options"); it != doc.end()) {
      opt.seed = get_as<std::uint64_t>(*it, "seed", "options");
      opt.max_iter = get_as<std::size_t>(*it, "max_iter", "options");
      opt.tol = get_as<double>(*it, "tol", "options");
      opt.restarts = get_as<std::size_t>(*it, "restarts", "options");
      opt.unk_mass = get_as<double>(*it, "unk_mass", "options");
    }
    const auto states = get_as<std::size_t>(doc, "states", "");
    auto initial = get_as<std::vector<double>>(doc, "initial", "");
    if (initial.size() != states) throw SchemaError("initial", "length differs from states");
    out.model = CategoricalHmm::from_parameters(std::move(vocab), n, std::move(initial),
                                                get_as<Matrix>(doc, "transition", ""),
                                                get_as<Matrix>(doc, "emission", ""), opt);
  } else {
    throw SchemaError("kind", "unknown model kind '" + kind + "'");
  }

  if (auto it = doc.find("selection"); it != doc.end()) {
    out.grid = cells_from_json(require(*it, "grid", "selection"));
    out.chosen = get_as<std::size_t>(*it, "chosen", "selection");
    if (*out.chosen >= out.grid->size()) throw SchemaError("selection.chosen", "index out of range");
  }
  return out;
}

void save_model(const StoredModel& stored, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  f << model_to_json(stored).dump(1) << '\n';
  if (!f) throw IoError("write failed for " + path.string());
}

StoredModel load_model(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  ordered_json doc;
  try {
    doc = ordered_json::parse(ss.str());
  } catch (const nlohmann::json::parse_error& e) {
    throw SchemaError("<document>", e.what());
  }
  return model_from_json(doc);
}

}  // namespace traceaudit::typicality
