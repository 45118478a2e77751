#pragma once

#include <filesystem>
#include <initializer_list>
#include <string>
#include <string_view>

#include <json.hpp>

#include "coffar/error.hpp"
#include "coffar/model.hpp"

namespace coffar {

using Json = nlohmann::ordered_json;

/// Throws Config naming the first key of obj not in allowed.
void reject_unknown_keys(const Json& obj, std::initializer_list<std::string_view> allowed,
                         std::string_view where);

/// Parses a JSON file; parse failures are raised with the given kind and
/// carry nlohmann's line/column position.
Json read_json_file(const std::filesystem::path& path, ErrorKind parse_error_kind);

/// Writes text, raising Io on failure.
void write_text_file(const std::filesystem::path& path, std::string_view text);

Json model_config_to_json(const ModelConfig& config);
/// Strict: unknown keys and wrong types raise Config errors prefixed by `where`.
ModelConfig model_config_from_json(const Json& j, std::string_view where = "model");

}  // namespace coffar
