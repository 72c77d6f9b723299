#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace ieatforge {

// 64-bit FNV-1a. Used for deterministic mock outputs and seed derivation;
// stable across platforms, unlike std::hash.
inline uint64_t fnv1a64(std::string_view data, uint64_t h = 0xcbf29ce484222325ULL) {
    for (unsigned char c : data) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline uint64_t fnv1a64_mix(uint64_t h, uint64_t v) {
    for (int i = 0; i < 8; ++i) {
        h ^= (v >> (8 * i)) & 0xff;
        h *= 0x100000001b3ULL;
    }
    return h;
}

// Derives a per-purpose RNG seed from the global seed and a tag such as
// "corpus.sample_queries". Every random draw in the pipeline goes through
// one of these so stages stay independent and reruns reproduce exactly.
inline uint64_t derive_seed(uint64_t global_seed, std::string_view tag) {
    return fnv1a64_mix(fnv1a64(tag), global_seed * 0x9e3779b97f4a7c15ULL + 1);
}

inline std::mt19937_64 make_rng(uint64_t seed) {
    return std::mt19937_64(seed);
}

// --- string helpers ---

std::string to_lower(std::string_view s);
std::string trim(std::string_view s);
bool starts_with(std::string_view s, std::string_view prefix);
std::vector<std::string> split(std::string_view s, char sep);

// Case and punctuation folding used by the AQA exact-match scorer:
// lowercase ASCII, drop ASCII punctuation, collapse whitespace.
std::string normalize_answer(std::string_view s);

// Number of Unicode codepoints in valid-or-not UTF-8 (bad bytes count as one).
size_t codepoint_count(std::string_view s);

// True if the string contains any CJK unified ideograph. Used to pick the
// zh/en branch when a record carries no explicit language tag.
bool contains_cjk(std::string_view s);

// Truncate to at most n codepoints without splitting a UTF-8 sequence.
std::string truncate_codepoints(std::string_view s, size_t n);

size_t count_occurrences(std::string_view text, std::string_view needle);

// --- file helpers ---

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view content);

}  // namespace ieatforge
