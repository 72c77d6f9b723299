#pragma once

#include <filesystem>
#include <string>

#include "json.hpp"

namespace ieatforge {

// Reads the subset of TOML the pipeline configs use and returns it as a
// JSON object tree:
//   - [table] and [dotted.table] headers
//   - key = value with string / integer / float / boolean values
//   - single-line arrays of those scalars
//   - # comments, blank lines
// String values may reference environment variables as ${NAME}; unset
// variables resolve to the empty string.
nlohmann::json parse_toml(const std::string& text);
nlohmann::json load_toml_file(const std::filesystem::path& path);

}  // namespace ieatforge
