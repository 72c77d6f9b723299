#include "ieatforge/jsonl.hpp"

#include <fstream>
#include <sstream>

#include "ieatforge/errors.hpp"
#include "ieatforge/util.hpp"

namespace ieatforge {

JsonlReadResult read_jsonl(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw MissingPathError("cannot open manifest: " + path.string());
    JsonlReadResult result;
    std::string line;
    while (std::getline(in, line)) {
        if (trim(line).empty()) continue;
        json row = json::parse(line, nullptr, false);
        if (row.is_discarded() || !row.is_object()) {
            ++result.skipped;
            continue;
        }
        result.rows.push_back(std::move(row));
    }
    return result;
}

void write_jsonl(const std::filesystem::path& path, const std::vector<json>& rows) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ForgeError("cannot write manifest: " + path.string());
    for (const json& row : rows) {
        out << row.dump() << '\n';
    }
}

}  // namespace ieatforge
