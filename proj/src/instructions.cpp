#include "ieatforge/instructions.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <set>

#include "ieatforge/util.hpp"
#include "ieatforge/wav.hpp"

namespace ieatforge::instructions {

json InstructionRecord::to_json() const {
    json j{{"id", id}, {"task_id", task_id}, {"text", text},
           {"speaker_id", speaker_id}, {"review_status", review_status}};
    if (audio) j["audio"] = audio->to_json();
    return j;
}

InstructionRecord InstructionRecord::from_json(const json& j) {
    InstructionRecord r;
    r.id = j.at("id").get<std::string>();
    r.task_id = j.at("task_id").get<int>();
    r.text = j.at("text").get<std::string>();
    r.speaker_id = j.value("speaker_id", "");
    r.review_status = j.value("review_status", "pending");
    if (j.contains("audio") && !j["audio"].is_null()) r.audio = AudioRef::from_json(j["audio"]);
    return r;
}

std::vector<std::string> dedupe_case_insensitive(const std::vector<std::string>& texts) {
    std::vector<std::string> out;
    std::set<std::string> seen;
    for (const std::string& t : texts) {
        if (seen.insert(to_lower(t)).second) out.push_back(t);
    }
    return out;
}

std::vector<InstructionRecord> generate_instruction_texts(int task_id,
                                                          const clients::GeneratorClient& llm,
                                                          int target_count, double overgen_factor,
                                                          uint64_t seed) {
    if (task_id == 3) {
        throw ExemptionError("the empathetic-response task does not require extra instruction audio");
    }
    if (task_id != 1 && task_id != 2) {
        throw UnknownTaskError("instructions exist only for tasks 1 and 2");
    }
    if (target_count < 0 || overgen_factor < 1.0) {
        throw PreconditionError("target_count >= 0 and overgen_factor >= 1 required");
    }

    const char* task_goal = task_id == 1
                                ? "asking the listener to describe how the speaker's emotion "
                                  "changes from the beginning to the end of the dialogue"
                                : "asking the listener to explain the cause of the speaker's "
                                  "emotional state";
    const int candidates = static_cast<int>(std::llround(target_count * overgen_factor));

    std::vector<std::string> texts;
    texts.reserve(candidates);
    for (int i = 0; i < candidates; ++i) {
        clients::GenerationRequest request;
        request.messages = {
            {"system", std::string("You write short spoken task instructions, one per request, ") +
                           task_goal + "."},
            {"user", "Write one spoken instruction, variant " + std::to_string(i) + "."}};
        request.seed =
            derive_seed(seed, "instruction." + std::to_string(task_id) + "." + std::to_string(i));
        texts.push_back(llm.generate(request).response);
    }
    texts = dedupe_case_insensitive(texts);

    std::vector<InstructionRecord> records;
    records.reserve(texts.size());
    for (size_t i = 0; i < texts.size(); ++i) {
        InstructionRecord record;
        char buf[32];
        std::snprintf(buf, sizeof(buf), "instr_t%d_%04zu", task_id, i);
        record.id = buf;
        record.task_id = task_id;
        record.text = texts[i];
        records.push_back(std::move(record));
    }
    return records;
}

void export_review_file(const std::filesystem::path& path,
                        const std::vector<InstructionRecord>& records) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ForgeError("cannot write review file: " + path.string());
    out << "id\ttask\ttext\tstatus\n";
    for (const auto& r : records) {
        std::string text = r.text;
        std::replace(text.begin(), text.end(), '\t', ' ');
        std::replace(text.begin(), text.end(), '\n', ' ');
        out << r.id << '\t' << r.task_id << '\t' << text << '\t' << r.review_status << '\n';
    }
}

std::vector<InstructionRecord> import_review_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw MissingPathError("cannot open review file: " + path.string());
    std::vector<InstructionRecord> records;
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        if (first) {  // header
            first = false;
            continue;
        }
        if (trim(line).empty()) continue;
        auto cols = split(line, '\t');
        if (cols.size() != 4) throw SchemaViolationError("bad review row: " + line);
        InstructionRecord r;
        r.id = cols[0];
        r.task_id = std::stoi(cols[1]);
        r.text = cols[2];
        r.review_status = cols[3];
        records.push_back(std::move(r));
    }
    return records;
}

void auto_accept(std::vector<InstructionRecord>& records, int target_count) {
    int accepted = 0;
    for (auto& r : records) {
        if (accepted < target_count && !r.text.empty()) {
            r.review_status = "accepted";
            ++accepted;
        } else {
            r.review_status = "rejected";
        }
    }
    if (accepted < target_count) {
        throw PreconditionError("only " + std::to_string(accepted) +
                                " distinct candidates for target " + std::to_string(target_count));
    }
}

std::vector<std::string> pick_speakers(const std::vector<std::string>& speaker_pool, size_t count,
                                       uint64_t seed) {
    std::set<std::string> distinct(speaker_pool.begin(), speaker_pool.end());
    if (distinct.size() < count) {
        throw PoolTooSmallError("speaker pool has " + std::to_string(distinct.size()) +
                                " distinct ids, need " + std::to_string(count));
    }
    std::vector<std::string> pool(distinct.begin(), distinct.end());
    auto rng = make_rng(seed);
    std::shuffle(pool.begin(), pool.end(), rng);
    pool.resize(count);
    return pool;
}

SynthesisResult synthesize_instruction_audio(const std::vector<InstructionRecord>& records,
                                             const std::vector<std::string>& speakers,
                                             const clients::TtsClient& tts, uint64_t seed,
                                             const clients::RetryPolicy& retry) {
    if (speakers.empty()) throw PreconditionError("no speakers selected");
    SynthesisResult result;
    for (const InstructionRecord& record : records) {
        if (record.review_status != "accepted") {
            result.records.push_back(record);
            continue;
        }
        InstructionRecord out = record;
        out.speaker_id = speakers[fnv1a64_mix(fnv1a64(record.id), seed) % speakers.size()];
        try {
            out.audio = clients::with_retries(
                [&] {
                    return tts.synthesize(record.text, out.speaker_id,
                                          clients::detect_language(record.text));
                },
                retry);
        } catch (const TransportError& e) {
            std::cerr << "[warn] rejecting instruction " << record.id << ": " << e.what() << "\n";
            out.review_status = "rejected";
            out.speaker_id.clear();
            ++result.rejected;
        }
        result.records.push_back(std::move(out));
    }
    return result;
}

AudioRef concatenate_instruction(const AudioRef& instruction, const AudioRef& query, int gap_ms,
                                 const AudioStore& store) {
    if (gap_ms < 0) throw PreconditionError("gap_ms must be >= 0");
    WavData instr_wav = store.load(instruction);
    WavData query_wav = store.load(query);
    if (query_wav.sample_rate_hz != instr_wav.sample_rate_hz) {
        std::cerr << "[warn] resampling query " << query.uri << " from " << query_wav.sample_rate_hz
                  << " Hz to " << instr_wav.sample_rate_hz << " Hz\n";
        query_wav = resample(query_wav, instr_wav.sample_rate_hz);
    }

    WavData out;
    out.sample_rate_hz = instr_wav.sample_rate_hz;
    size_t gap_samples = static_cast<size_t>(instr_wav.sample_rate_hz) * gap_ms / 1000;
    out.samples.reserve(instr_wav.samples.size() + gap_samples + query_wav.samples.size());
    out.samples.insert(out.samples.end(), instr_wav.samples.begin(), instr_wav.samples.end());
    out.samples.insert(out.samples.end(), gap_samples, 0);
    out.samples.insert(out.samples.end(), query_wav.samples.begin(), query_wav.samples.end());

    AudioSidecar instr_side = store.load_sidecar(instruction).value_or(AudioSidecar{});
    AudioSidecar query_side = store.load_sidecar(query).value_or(AudioSidecar{});
    AudioSidecar sidecar{trim(instr_side.transcript + "\n" + query_side.transcript),
                         query_side.emotion, query_side.speaker_id};
    return store.put(out, sidecar);
}

void write_instruction_manifest(const std::filesystem::path& path,
                                const std::vector<InstructionRecord>& records) {
    std::vector<json> rows;
    rows.reserve(records.size());
    for (const auto& r : records) rows.push_back(r.to_json());
    write_jsonl(path, rows);
}

std::vector<InstructionRecord> load_instruction_manifest(const std::filesystem::path& path) {
    std::vector<InstructionRecord> records;
    for (const json& row : read_jsonl(path).rows) {
        records.push_back(InstructionRecord::from_json(row));
    }
    return records;
}

}  // namespace ieatforge::instructions
