#include "ieatforge/corpus.hpp"

#include <algorithm>
#include <iostream>
#include <set>

#include "ieatforge/util.hpp"

namespace ieatforge::corpus {

json UtteranceRecord::to_json() const {
    json j{{"id", id},
           {"transcript", transcript},
           {"language", clients::to_string(language)},
           {"source", source},
           {"split", split}};
    if (audio) j["audio"] = audio->to_json();
    if (!meta.empty()) j["meta"] = meta;
    return j;
}

UtteranceRecord UtteranceRecord::from_json(const json& j) {
    UtteranceRecord r;
    r.id = j.at("id").get<std::string>();
    r.transcript = j.value("transcript", "");
    r.language = clients::language_from_string(j.at("language").get<std::string>());
    r.source = j.value("source", "");
    r.split = j.value("split", "train");
    if (j.contains("audio") && !j["audio"].is_null()) r.audio = AudioRef::from_json(j["audio"]);
    if (j.contains("meta")) r.meta = j["meta"].get<std::map<std::string, std::string>>();
    if (r.id.empty()) throw SchemaViolationError("record without id");
    if (!r.audio && r.transcript.empty()) {
        throw SchemaViolationError("record " + r.id + " has neither audio nor transcript");
    }
    return r;
}

json QueryRecord::to_json() const {
    json j{{"id", id}, {"text", text}, {"origin", origin}};
    if (audio) j["audio"] = audio->to_json();
    return j;
}

QueryRecord QueryRecord::from_json(const json& j) {
    QueryRecord r;
    r.id = j.at("id").get<std::string>();
    r.text = j.at("text").get<std::string>();
    r.origin = j.value("origin", "");
    if (j.contains("audio") && !j["audio"].is_null()) r.audio = AudioRef::from_json(j["audio"]);
    if (r.id.empty() || r.text.empty()) throw SchemaViolationError("query without id or text");
    return r;
}

LoadResult load_corpus(const CorpusDescriptor& descriptor) {
    if (!std::filesystem::exists(descriptor.manifest_path)) {
        throw MissingPathError("corpus manifest missing: " + descriptor.manifest_path.string());
    }
    JsonlReadResult raw = read_jsonl(descriptor.manifest_path);
    LoadResult result;
    result.skipped = raw.skipped;
    std::set<std::string> seen;
    for (const json& row : raw.rows) {
        UtteranceRecord record;
        try {
            record = UtteranceRecord::from_json(row);
        } catch (const ForgeError&) {
            ++result.skipped;
            continue;
        } catch (const json::exception&) {
            ++result.skipped;
            continue;
        }
        if (!seen.insert(record.id).second) {
            throw SchemaViolationError("duplicated id in " + descriptor.name + ": " + record.id);
        }
        result.records.push_back(std::move(record));
    }
    size_t total = raw.rows.size() + raw.skipped;
    if (total > 0 && result.skipped * 10 > total) {
        throw SchemaViolationError("more than 10% malformed rows in " + descriptor.name + " (" +
                                   std::to_string(result.skipped) + "/" + std::to_string(total) +
                                   "); wrong format?");
    }
    std::sort(result.records.begin(), result.records.end(),
              [](const auto& a, const auto& b) { return a.id < b.id; });
    return result;
}

void write_manifest(const std::filesystem::path& path, const std::vector<UtteranceRecord>& records) {
    std::vector<json> rows;
    rows.reserve(records.size());
    for (const auto& r : records) rows.push_back(r.to_json());
    write_jsonl(path, rows);
}

std::vector<UtteranceRecord> load_manifest(const std::filesystem::path& path) {
    std::vector<UtteranceRecord> records;
    for (const json& row : read_jsonl(path).rows) records.push_back(UtteranceRecord::from_json(row));
    return records;
}

void write_query_manifest(const std::filesystem::path& path, const std::vector<QueryRecord>& records) {
    std::vector<json> rows;
    rows.reserve(records.size());
    for (const auto& r : records) rows.push_back(r.to_json());
    write_jsonl(path, rows);
}

std::vector<QueryRecord> load_query_manifest(const std::filesystem::path& path) {
    std::vector<QueryRecord> records;
    for (const json& row : read_jsonl(path).rows) records.push_back(QueryRecord::from_json(row));
    return records;
}

QueryFilter default_query_filter(size_t max_chars) {
    return [max_chars](const QueryRecord& q) {
        return !trim(q.text).empty() && codepoint_count(q.text) <= max_chars;
    };
}

std::vector<QueryRecord> sample_queries(const std::vector<QueryRecord>& pool, size_t count,
                                        uint64_t seed, const QueryFilter& filter) {
    std::vector<QueryRecord> eligible;
    for (const QueryRecord& q : pool) {
        if (!filter || filter(q)) eligible.push_back(q);
    }
    std::sort(eligible.begin(), eligible.end(),
              [](const auto& a, const auto& b) { return a.id < b.id; });
    auto rng = make_rng(seed);
    std::shuffle(eligible.begin(), eligible.end(), rng);
    if (count < eligible.size()) {
        eligible.resize(count);
    } else if (count > eligible.size()) {
        std::cerr << "[warn] query pool has only " << eligible.size() << " eligible records, asked "
                  << count << "\n";
    }
    return eligible;
}

SynthesizeQueriesResult synthesize_query_audio(const std::vector<QueryRecord>& queries,
                                               const clients::TtsClient& tts,
                                               const SpeakerPolicy& policy,
                                               const clients::RetryPolicy& retry) {
    if (policy.speakers.empty()) throw PreconditionError("speaker policy has no speakers");
    std::vector<std::string> order = policy.speakers;
    auto rng = make_rng(policy.seed);
    std::shuffle(order.begin(), order.end(), rng);

    std::vector<QueryRecord> sorted = queries;
    std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.id < b.id; });

    SynthesizeQueriesResult result;
    size_t index = 0;
    for (const QueryRecord& query : sorted) {
        if (trim(query.text).empty()) throw PreconditionError("query " + query.id + " has no text");
        const std::string& speaker = order[index++ % order.size()];
        clients::Language lang = clients::detect_language(query.text);
        try {
            QueryRecord out = query;
            out.audio = clients::with_retries(
                [&] { return tts.synthesize(query.text, speaker, lang); }, retry);
            result.records.push_back(std::move(out));
        } catch (const TransportError& e) {
            std::cerr << "[warn] dropping query " << query.id << " after retries: " << e.what()
                      << "\n";
            ++result.dropped;
        }
    }
    return result;
}

std::vector<UtteranceRecord> merge_training_set(const std::vector<ManifestPart>& parts) {
    // Uniquify part names first so merging the same part twice stays legal.
    std::map<std::string, int> name_uses;
    std::vector<std::string> prefixes;
    for (const ManifestPart& part : parts) {
        int n = ++name_uses[part.name];
        prefixes.push_back(n == 1 ? part.name : part.name + "~" + std::to_string(n));
    }
    std::vector<UtteranceRecord> merged;
    std::set<std::string> seen;
    for (size_t p = 0; p < parts.size(); ++p) {
        for (const UtteranceRecord& record : parts[p].records) {
            UtteranceRecord out = record;
            out.id = prefixes[p] + "/" + record.id;
            if (!seen.insert(out.id).second) {
                throw SchemaViolationError("id collision after prefixing: " + out.id);
            }
            merged.push_back(std::move(out));
        }
    }
    return merged;
}

MaterializeResult materialize_audio(const std::vector<UtteranceRecord>& records,
                                    const AudioStore& store, int rate_chars_per_s,
                                    int sample_rate_hz) {
    MaterializeResult result;
    for (const UtteranceRecord& record : records) {
        if (record.audio || record.transcript.empty()) {
            result.records.push_back(record);
            continue;
        }
        auto speaker_it = record.meta.find("speaker");
        std::string speaker = speaker_it != record.meta.end() ? speaker_it->second : record.id;
        WavData wav = clients::mock_tone(record.transcript, speaker, rate_chars_per_s, sample_rate_hz);
        auto emotion_it = record.meta.find("emotion");
        AudioSidecar sidecar{record.transcript,
                             emotion_it != record.meta.end() ? emotion_it->second : "", speaker};
        UtteranceRecord out = record;
        out.audio = store.put(wav, sidecar);
        result.records.push_back(std::move(out));
        ++result.synthesized;
    }
    return result;
}

}  // namespace ieatforge::corpus
