#pragma once

#include <map>
#include <string>
#include <vector>

#include "ieatforge/config.hpp"

namespace ieatforge::pipeline {

// Stage graph, in execution order. Each stage declares the files it reads
// and writes; run_stage refuses to start when an upstream output is missing
// and no-ops when its completion digest already matches.
inline const std::vector<std::string>& stage_order() {
    static const std::vector<std::string> order = {"ingest",       "stage11", "annotate",
                                                   "ieat",         "dialogues", "instructions",
                                                   "train",        "eval",      "report"};
    return order;
}

struct StageReport {
    std::string stage;
    bool skipped = false;  // completion digest matched; nothing re-run
    std::map<std::string, int64_t> counts;
    std::vector<std::string> outputs;  // artifact-relative paths

    json to_json() const;
};

struct RunSummary {
    std::vector<StageReport> reports;
    std::filesystem::path report_path;  // rendered report.txt
};

class Pipeline {
public:
    explicit Pipeline(PipelineConfig config);

    StageReport run_stage(const std::string& stage);
    RunSummary run_all();

    const PipelineConfig& config() const { return config_; }
    std::filesystem::path artifacts_dir() const { return config_.out_dir / "artifacts"; }
    std::filesystem::path state_dir() const { return config_.out_dir / "state"; }

    // Declared manifest inputs of a stage, artifact-relative; external data
    // files (corpus, templates, fixtures) are tracked separately.
    static std::vector<std::string> stage_inputs(const std::string& stage);
    static std::vector<std::string> stage_outputs(const std::string& stage);

private:
    PipelineConfig config_;

    std::string stage_input_digest(const std::string& stage) const;
    std::string output_digest(const std::vector<std::string>& outputs) const;
    void require_upstream(const std::string& stage) const;

    StageReport run_ingest();
    StageReport run_stage11();
    StageReport run_annotate();
    StageReport run_ieat();
    StageReport run_dialogues();
    StageReport run_instructions();
    StageReport run_train();
    StageReport run_eval();
    StageReport run_report();

    clients::ClientSet make_clients() const;
    clients::MockSettings mock_settings() const;
    std::map<int, std::string> load_rubrics() const;
};

}  // namespace ieatforge::pipeline
