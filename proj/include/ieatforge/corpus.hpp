#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ieatforge/clients.hpp"

namespace ieatforge::corpus {

using clients::Language;

// One audio/text unit; the pipeline's atom.
struct UtteranceRecord {
    std::string id;
    std::optional<AudioRef> audio;
    std::string transcript;
    Language language = Language::en;
    std::string source;
    std::string split = "train";  // train | dev
    std::map<std::string, std::string> meta;

    json to_json() const;
    static UtteranceRecord from_json(const json& j);
    bool operator==(const UtteranceRecord&) const = default;
};

struct QueryRecord {
    std::string id;
    std::string text;
    std::string origin;
    std::optional<AudioRef> audio;

    json to_json() const;
    static QueryRecord from_json(const json& j);
    bool operator==(const QueryRecord&) const = default;
};

struct CorpusDescriptor {
    std::string name;
    std::filesystem::path manifest_path;
};

struct LoadResult {
    std::vector<UtteranceRecord> records;  // stable id order
    size_t skipped = 0;
};

// Reads a JSON Lines manifest. Malformed rows are skipped and counted;
// more than 10% malformed or any duplicated id raises SchemaViolationError.
LoadResult load_corpus(const CorpusDescriptor& descriptor);

void write_manifest(const std::filesystem::path& path, const std::vector<UtteranceRecord>& records);
std::vector<UtteranceRecord> load_manifest(const std::filesystem::path& path);

void write_query_manifest(const std::filesystem::path& path, const std::vector<QueryRecord>& records);
std::vector<QueryRecord> load_query_manifest(const std::filesystem::path& path);

using QueryFilter = std::function<bool(const QueryRecord&)>;

// Default "suitable query" predicate: non-empty text at most max_chars
// codepoints long.
QueryFilter default_query_filter(size_t max_chars);

// Samples without replacement, deterministically in seed. Short pools
// return fewer records with a logged warning.
std::vector<QueryRecord> sample_queries(const std::vector<QueryRecord>& pool, size_t count,
                                        uint64_t seed, const QueryFilter& filter);

struct SpeakerPolicy {
    std::vector<std::string> speakers;  // round-robin order is a seeded shuffle of this list
    uint64_t seed = 0;
};

struct SynthesizeQueriesResult {
    std::vector<QueryRecord> records;  // id order
    size_t dropped = 0;
};

SynthesizeQueriesResult synthesize_query_audio(const std::vector<QueryRecord>& queries,
                                               const clients::TtsClient& tts,
                                               const SpeakerPolicy& policy,
                                               const clients::RetryPolicy& retry);

struct ManifestPart {
    std::string name;
    std::vector<UtteranceRecord> records;
};

// Concatenates parts, prefixing every id with the (uniquified) part name so
// global uniqueness holds by construction.
std::vector<UtteranceRecord> merge_training_set(const std::vector<ManifestPart>& parts);

// The bundled synthetic mini-corpus ships transcripts plus sidecar emotion
// tags; its waveforms are realized deterministically from the transcripts.
// Records that already carry audio pass through untouched.
struct MaterializeResult {
    std::vector<UtteranceRecord> records;
    size_t synthesized = 0;
};

MaterializeResult materialize_audio(const std::vector<UtteranceRecord>& records,
                                    const AudioStore& store, int rate_chars_per_s,
                                    int sample_rate_hz);

}  // namespace ieatforge::corpus
