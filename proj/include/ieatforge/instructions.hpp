#pragma once

#include <string>
#include <vector>

#include "ieatforge/clients.hpp"

namespace ieatforge::instructions {

struct InstructionRecord {
    std::string id;
    int task_id = 0;  // 1 or 2; the empathetic-response task is exempt
    std::string text;
    std::optional<AudioRef> audio;
    std::string speaker_id;
    std::string review_status = "pending";  // pending | accepted | rejected

    json to_json() const;
    static InstructionRecord from_json(const json& j);
};

// Case-insensitive dedup keeping first occurrences.
std::vector<std::string> dedupe_case_insensitive(const std::vector<std::string>& texts);

// LLM-generates target_count * overgen_factor candidates and dedupes them.
// Task 3 raises ExemptionError: it does not require extra instruction audio.
std::vector<InstructionRecord> generate_instruction_texts(int task_id,
                                                          const clients::GeneratorClient& llm,
                                                          int target_count, double overgen_factor,
                                                          uint64_t seed);

// The manual-filtering stand-in: a tab-separated review file (id, task,
// text, status) that a reviewer edits, plus an auto-accept mode for CI.
void export_review_file(const std::filesystem::path& path,
                        const std::vector<InstructionRecord>& records);
std::vector<InstructionRecord> import_review_file(const std::filesystem::path& path);
void auto_accept(std::vector<InstructionRecord>& records, int target_count);

std::vector<std::string> pick_speakers(const std::vector<std::string>& speaker_pool, size_t count,
                                       uint64_t seed);

struct SynthesisResult {
    std::vector<InstructionRecord> records;  // accepted ones gain audio
    size_t rejected = 0;                     // TTS failures after retries
};

SynthesisResult synthesize_instruction_audio(const std::vector<InstructionRecord>& records,
                                             const std::vector<std::string>& speakers,
                                             const clients::TtsClient& tts, uint64_t seed,
                                             const clients::RetryPolicy& retry);

// instruction first, then gap_ms of silence, then the query; the query is
// resampled to the instruction rate when they disagree.
AudioRef concatenate_instruction(const AudioRef& instruction, const AudioRef& query, int gap_ms,
                                 const AudioStore& store);

void write_instruction_manifest(const std::filesystem::path& path,
                                const std::vector<InstructionRecord>& records);
std::vector<InstructionRecord> load_instruction_manifest(const std::filesystem::path& path);

}  // namespace ieatforge::instructions
