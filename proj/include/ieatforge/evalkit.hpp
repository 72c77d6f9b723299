#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ieatforge/clients.hpp"

namespace ieatforge::evalkit {

using clients::Language;

// Per-item judge scores on the 0-5 scale.
struct EvalRecord {
    int task_id = 0;
    Language language = Language::en;
    std::string item_id;
    std::vector<double> dimension_scores;
    double overall = 0.0;  // arithmetic mean of dimensions

    json to_json() const;
    static EvalRecord from_json(const json& j);
};

struct JudgedItem {
    std::string item_id;
    Language language = Language::en;
    std::string dialogue;  // full context shown to the judge
    std::string response;
};

struct ScoreTaskResult {
    std::vector<EvalRecord> records;
    size_t missing = 0;  // judge failures after retries, excluded from means
};

ScoreTaskResult score_task(const std::vector<JudgedItem>& items,
                           const clients::JudgeClient& judge, int task_id,
                           const std::string& rubric, uint64_t seed,
                           const clients::RetryPolicy& retry);

double mean_overall(const std::vector<EvalRecord>& records);

// TELEVAL-style AQA item: exact match after case/punctuation folding, with
// optional judge-based partial credit for misses.
struct AqaItem {
    std::string item_id;
    Language language = Language::en;
    std::string response;
    std::string reference;
};

double score_aqa(const std::vector<AqaItem>& items,
                 const clients::JudgeClient* partial_credit_judge = nullptr, uint64_t seed = 0);

// Weighted final score over named columns (Task1, Task2, Task3, Hum).
struct ScoreReport {
    std::map<std::string, double> columns;
    std::optional<double> human_score;
    std::map<std::string, double> weights;
    double final_score = 0.0;

    json to_json() const;
};

ScoreReport aggregate_final(const std::map<std::string, double>& per_task_means,
                            std::optional<double> human_score,
                            const std::map<std::string, double>& weights);

// Checked-in published values used for side-by-side report rendering.
struct FixtureRow {
    std::string name;
    std::vector<double> values;
};

struct FixtureTables {
    std::vector<std::string> dev_columns;   // Task1-zh ... AQA-en
    std::vector<FixtureRow> dev_rows;       // per-model dev results
    std::vector<std::string> test_columns;  // Task1 ... Final Score
    std::vector<FixtureRow> test_rows;      // per-team test results

    static FixtureTables from_file(const std::filesystem::path& path);
};

struct ReportDocument {
    std::string text;
    std::string csv;
};

// Table with the dev-set column layout plus fixture rows for visual
// comparison; deterministic output.
ReportDocument render_report(const std::map<std::string, double>& run_columns,
                             const std::optional<ScoreReport>& final_report,
                             const FixtureTables& fixtures);

void write_eval_records(const std::filesystem::path& path, const std::vector<EvalRecord>& records);
std::vector<EvalRecord> load_eval_records(const std::filesystem::path& path);

}  // namespace ieatforge::evalkit
