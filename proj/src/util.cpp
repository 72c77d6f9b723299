#include "ieatforge/util.hpp"

#include <cctype>
#include <fstream>
#include <sstream>

#include "ieatforge/errors.hpp"

namespace ieatforge {

std::string to_lower(std::string_view s) {
    std::string out(s);
    for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

std::string trim(std::string_view s) {
    size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return std::string(s.substr(b, e - b));
}

bool starts_with(std::string_view s, std::string_view prefix) {
    return s.size() >= prefix.size() && s.substr(0, prefix.size()) == prefix;
}

std::vector<std::string> split(std::string_view s, char sep) {
    std::vector<std::string> parts;
    size_t start = 0;
    for (size_t i = 0; i <= s.size(); ++i) {
        if (i == s.size() || s[i] == sep) {
            parts.emplace_back(s.substr(start, i - start));
            start = i + 1;
        }
    }
    return parts;
}

std::string normalize_answer(std::string_view s) {
    std::string out;
    out.reserve(s.size());
    bool pending_space = false;
    for (unsigned char c : s) {
        if (std::isspace(c)) {
            pending_space = !out.empty();
            continue;
        }
        if (c < 0x80 && std::ispunct(c)) continue;
        if (pending_space) {
            out += ' ';
            pending_space = false;
        }
        out += static_cast<char>(std::tolower(c));
    }
    return out;
}

namespace {

// Length of the UTF-8 sequence introduced by byte b (1 for malformed bytes).
size_t utf8_seq_len(unsigned char b) {
    if (b < 0x80) return 1;
    if ((b >> 5) == 0x6) return 2;
    if ((b >> 4) == 0xe) return 3;
    if ((b >> 3) == 0x1e) return 4;
    return 1;
}

}  // namespace

size_t codepoint_count(std::string_view s) {
    size_t n = 0;
    for (size_t i = 0; i < s.size();) {
        i += utf8_seq_len(static_cast<unsigned char>(s[i]));
        ++n;
    }
    return n;
}

bool contains_cjk(std::string_view s) {
    for (size_t i = 0; i < s.size();) {
        unsigned char b = static_cast<unsigned char>(s[i]);
        size_t len = utf8_seq_len(b);
        if (len == 3 && i + 2 < s.size()) {
            uint32_t cp = static_cast<uint32_t>(b & 0x0f) << 12 |
                          static_cast<uint32_t>(s[i + 1] & 0x3f) << 6 |
                          static_cast<uint32_t>(s[i + 2] & 0x3f);
            if ((cp >= 0x4e00 && cp <= 0x9fff) || (cp >= 0x3400 && cp <= 0x4dbf) ||
                (cp >= 0x3000 && cp <= 0x303f) || (cp >= 0xff00 && cp <= 0xffef)) {
                return true;
            }
        }
        i += len;
    }
    return false;
}

std::string truncate_codepoints(std::string_view s, size_t n) {
    size_t i = 0, count = 0;
    while (i < s.size() && count < n) {
        i += utf8_seq_len(static_cast<unsigned char>(s[i]));
        ++count;
    }
    return std::string(s.substr(0, i));
}

size_t count_occurrences(std::string_view text, std::string_view needle) {
    if (needle.empty()) return 0;
    size_t n = 0;
    for (size_t pos = text.find(needle); pos != std::string_view::npos;
         pos = text.find(needle, pos + needle.size())) {
        ++n;
    }
    return n;
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MissingPathError("cannot open file: " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::filesystem::path& path, std::string_view content) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ForgeError("cannot write file: " + path.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
}

}  // namespace ieatforge
