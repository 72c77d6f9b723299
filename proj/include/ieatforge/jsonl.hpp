#pragma once

#include <filesystem>
#include <vector>

#include "json.hpp"

namespace ieatforge {

using json = nlohmann::json;

struct JsonlReadResult {
    std::vector<json> rows;
    size_t skipped = 0;  // lines that failed to parse or were not objects
};

// Reads a JSON Lines file; blank lines are ignored, malformed lines counted.
JsonlReadResult read_jsonl(const std::filesystem::path& path);

// Writes one compact JSON object per line. nlohmann::json keeps object keys
// sorted, which is what makes manifests byte-reproducible.
void write_jsonl(const std::filesystem::path& path, const std::vector<json>& rows);

}  // namespace ieatforge
