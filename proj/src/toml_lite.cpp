#include "ieatforge/toml_lite.hpp"

#include <cctype>
#include <cstdlib>

#include "ieatforge/errors.hpp"
#include "ieatforge/util.hpp"

namespace ieatforge {

namespace {

using json = nlohmann::json;

std::string interpolate_env(const std::string& s) {
    std::string out;
    size_t i = 0;
    while (i < s.size()) {
        if (s[i] == '$' && i + 1 < s.size() && s[i + 1] == '{') {
            size_t close = s.find('}', i + 2);
            if (close != std::string::npos) {
                std::string name = s.substr(i + 2, close - i - 2);
                const char* val = std::getenv(name.c_str());
                if (val) out += val;
                i = close + 1;
                continue;
            }
        }
        out += s[i++];
    }
    return out;
}

std::string parse_quoted(const std::string& s, size_t& pos) {
    // pos points at the opening quote
    std::string out;
    ++pos;
    while (pos < s.size() && s[pos] != '"') {
        if (s[pos] == '\\' && pos + 1 < s.size()) {
            char c = s[pos + 1];
            if (c == 'n') out += '\n';
            else if (c == 't') out += '\t';
            else if (c == '"') out += '"';
            else if (c == '\\') out += '\\';
            else out += c;
            pos += 2;
        } else {
            out += s[pos++];
        }
    }
    if (pos >= s.size()) throw ConfigValidationError("unterminated string in config");
    ++pos;  // closing quote
    return interpolate_env(out);
}

json parse_scalar(const std::string& tok) {
    std::string t = trim(tok);
    if (t == "true") return true;
    if (t == "false") return false;
    // integer or float
    bool is_number = !t.empty();
    bool has_dot = false, has_exp = false;
    for (size_t i = 0; i < t.size() && is_number; ++i) {
        char c = t[i];
        if (std::isdigit(static_cast<unsigned char>(c))) continue;
        if ((c == '+' || c == '-') && (i == 0 || t[i - 1] == 'e' || t[i - 1] == 'E')) continue;
        if (c == '.') { has_dot = true; continue; }
        if (c == 'e' || c == 'E') { has_exp = true; continue; }
        if (c == '_') continue;
        is_number = false;
    }
    if (is_number) {
        std::string digits;
        for (char c : t) if (c != '_') digits += c;
        if (has_dot || has_exp) return std::stod(digits);
        return static_cast<int64_t>(std::stoll(digits));
    }
    throw ConfigValidationError("cannot parse config value: '" + t + "'");
}

json parse_value(const std::string& s, size_t& pos);

json parse_array(const std::string& s, size_t& pos) {
    json arr = json::array();
    ++pos;  // '['
    while (pos < s.size()) {
        while (pos < s.size() && (std::isspace(static_cast<unsigned char>(s[pos])) || s[pos] == ',')) ++pos;
        if (pos < s.size() && s[pos] == ']') {
            ++pos;
            return arr;
        }
        arr.push_back(parse_value(s, pos));
    }
    throw ConfigValidationError("unterminated array in config");
}

json parse_value(const std::string& s, size_t& pos) {
    while (pos < s.size() && std::isspace(static_cast<unsigned char>(s[pos]))) ++pos;
    if (pos >= s.size()) throw ConfigValidationError("missing config value");
    if (s[pos] == '"') return parse_quoted(s, pos);
    if (s[pos] == '[') return parse_array(s, pos);
    size_t end = pos;
    while (end < s.size() && s[end] != ',' && s[end] != ']' && s[end] != '#') ++end;
    json v = parse_scalar(s.substr(pos, end - pos));
    pos = end;
    return v;
}

// Strips a trailing comment, respecting quoted strings.
std::string strip_comment(const std::string& line) {
    bool in_string = false;
    for (size_t i = 0; i < line.size(); ++i) {
        if (line[i] == '"' && (i == 0 || line[i - 1] != '\\')) in_string = !in_string;
        if (line[i] == '#' && !in_string) return line.substr(0, i);
    }
    return line;
}

json* descend(json& root, const std::string& dotted) {
    json* node = &root;
    for (const std::string& part : split(dotted, '.')) {
        std::string key = trim(part);
        if (key.empty()) throw ConfigValidationError("empty table name in config");
        node = &(*node)[key];
        if (node->is_null()) *node = json::object();
    }
    return node;
}

}  // namespace

nlohmann::json parse_toml(const std::string& text) {
    json root = json::object();
    json* current = &root;
    size_t lineno = 0;
    for (const std::string& raw : split(text, '\n')) {
        ++lineno;
        std::string line = trim(strip_comment(raw));
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') {
                throw ConfigValidationError("bad table header at line " + std::to_string(lineno));
            }
            current = descend(root, line.substr(1, line.size() - 2));
            continue;
        }
        size_t eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigValidationError("expected key = value at line " + std::to_string(lineno));
        }
        std::string key = trim(line.substr(0, eq));
        if (key.size() >= 2 && key.front() == '"' && key.back() == '"') {
            key = key.substr(1, key.size() - 2);
        }
        if (key.empty()) throw ConfigValidationError("empty key at line " + std::to_string(lineno));
        std::string rest = line.substr(eq + 1);
        size_t pos = 0;
        json value = parse_value(rest, pos);
        if (!trim(rest.substr(pos)).empty()) {
            throw ConfigValidationError("trailing content at line " + std::to_string(lineno));
        }
        (*current)[key] = std::move(value);
    }
    return root;
}

nlohmann::json load_toml_file(const std::filesystem::path& path) {
    return parse_toml(read_file(path));
}

}  // namespace ieatforge
