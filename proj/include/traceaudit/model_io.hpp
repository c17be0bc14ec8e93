// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include <json.hpp>

#include "traceaudit/typicality.hpp"

namespace traceaudit::typicality {

inline constexpr int kModelFormatVersion = 1;

/// A model plus the grid-search record that produced it, if any.
struct StoredModel {
  TypicalityModel model;
  std::optional<std::vector<GridCell>> grid;
  std::optional<std::size_t> chosen;
};

nlohmann::ordered_json model_to_json(const StoredModel& stored);

/// Throws SchemaError naming the offending field.
StoredModel model_from_json(const nlohmann::ordered_json& doc);

void save_model(const StoredModel& stored, const std::filesystem::path& path);
StoredModel load_model(const std::filesystem::path& path);

}  // namespace traceaudit::typicality
