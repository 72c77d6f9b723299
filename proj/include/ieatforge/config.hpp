#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ieatforge/clients.hpp"
#include "ieatforge/model.hpp"
#include "ieatforge/train.hpp"

namespace ieatforge::pipeline {

// Everything a run needs, loaded from one TOML file. Relative paths resolve
// against the config file's directory; the CLI may override seed, out_dir
// and mock mode.
struct PipelineConfig {
    // [run]
    uint64_t seed = 20250810;
    std::filesystem::path out_dir = "out";
    bool mock = true;

    // [clients]
    clients::ThinkTokens think_tokens;
    clients::EmotionTaxonomy taxonomy = clients::EmotionTaxonomy::defaults();
    clients::RetryPolicy retry{3, 100};
    int judge_dimensions = 3;
    int max_in_flight = 8;

    // [tts]
    int tts_rate_chars_per_s = 20;
    int tts_sample_rate_hz = 8000;

    // [corpus]
    std::vector<std::filesystem::path> corpus_manifests;
    std::filesystem::path query_file;
    size_t query_sample_count = 80;
    size_t query_max_chars = 200;
    std::vector<std::string> query_speakers;

    // [ieat]
    std::filesystem::path template_file;
    std::filesystem::path prompt_file;
    std::string template_id = "t_default";
    std::string fallback_emotion = "neutral";
    std::string tasks_mode = "partition";  // partition | all
    int generation_max_tokens = 512;

    // [dialogue]
    double reorg_fraction = 0.40;
    std::map<int, double> turn_mix = {{2, 1.0 / 3}, {3, 1.0 / 3}, {4, 1.0 / 3}};
    int max_rejects = 200;

    // [instructions]
    int instruction_target_count = 500;
    double instruction_overgen_factor = 1.2;
    size_t instruction_speaker_count = 50;
    std::filesystem::path speaker_file;
    int concat_gap_ms = 200;
    std::optional<std::filesystem::path> review_import;  // human-reviewed file, else auto-accept

    // [train]
    trainkit::ModelSpec model;
    trainkit::OptimizerConfig optimizer;
    int stage1_steps = 30;
    int stage2_steps = 12;
    size_t batch_size = 4;
    double lambda_speech = 1.0;
    size_t max_seq = 384;
    bool middle_trainable_stage2 = false;
    bool update_text_head = true;

    // [eval]
    std::filesystem::path rubric_dir;
    std::filesystem::path aqa_file;
    size_t eval_max_items_per_task = 24;
    std::map<std::string, double> final_weights;
    std::optional<double> human_score;

    // [report]
    std::filesystem::path fixtures_file;

    static PipelineConfig from_file(const std::filesystem::path& path);
    static PipelineConfig from_toml(const json& doc, const std::filesystem::path& base_dir);

    // Checks paths, fractions, counts and weights; ConfigValidationError.
    void validate() const;

    // Stable serialization used in stage-completion digests.
    json to_json() const;
};

}  // namespace ieatforge::pipeline
