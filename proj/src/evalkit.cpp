#include "ieatforge/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <iostream>
#include <limits>
#include <sstream>

#include "ieatforge/util.hpp"

namespace ieatforge::evalkit {

json EvalRecord::to_json() const {
    return json{{"task_id", task_id},
                {"language", clients::to_string(language)},
                {"item_id", item_id},
                {"dimension_scores", dimension_scores},
                {"overall", overall}};
}

EvalRecord EvalRecord::from_json(const json& j) {
    EvalRecord r;
    r.task_id = j.at("task_id").get<int>();
    r.language = clients::language_from_string(j.at("language").get<std::string>());
    r.item_id = j.at("item_id").get<std::string>();
    r.dimension_scores = j.at("dimension_scores").get<std::vector<double>>();
    r.overall = j.at("overall").get<double>();
    return r;
}

ScoreTaskResult score_task(const std::vector<JudgedItem>& items,
                           const clients::JudgeClient& judge, int task_id,
                           const std::string& rubric, uint64_t seed,
                           const clients::RetryPolicy& retry) {
    ScoreTaskResult result;
    for (const JudgedItem& item : items) {
        std::vector<double> scores;
        try {
            scores = clients::with_retries(
                [&] {
                    return judge.judge(task_id, rubric, item.dialogue, item.response,
                                       derive_seed(seed, item.item_id));
                },
                retry);
        } catch (const TransportError& e) {
            std::cerr << "[warn] judge failed for " << item.item_id << ": " << e.what() << "\n";
            ++result.missing;
            continue;
        }
        EvalRecord record;
        record.task_id = task_id;
        record.language = item.language;
        record.item_id = item.item_id;
        record.dimension_scores = scores;
        for (double s : scores) {
            if (s < 0.0 || s > 5.0) throw PreconditionError("judge score outside [0,5]");
            record.overall += s;
        }
        if (scores.empty()) throw PreconditionError("judge returned no dimensions");
        record.overall /= static_cast<double>(scores.size());
        result.records.push_back(std::move(record));
    }
    if (!items.empty() && result.records.empty()) {
        throw AllItemsFailedError("every judge call failed for task " + std::to_string(task_id));
    }
    return result;
}

double mean_overall(const std::vector<EvalRecord>& records) {
    if (records.empty()) return 0.0;
    double sum = 0.0;
    for (const EvalRecord& r : records) sum += r.overall;
    return sum / static_cast<double>(records.size());
}

double score_aqa(const std::vector<AqaItem>& items, const clients::JudgeClient* partial_credit_judge,
                 uint64_t seed) {
    if (items.empty()) throw MissingReferenceError("no AQA items to score");
    double credit_sum = 0.0;
    for (const AqaItem& item : items) {
        if (trim(item.reference).empty()) {
            throw MissingReferenceError("AQA item " + item.item_id + " has no reference answer");
        }
        double credit = normalize_answer(item.response) == normalize_answer(item.reference) ? 1.0 : 0.0;
        if (credit == 0.0 && partial_credit_judge) {
            auto scores = partial_credit_judge->judge(2, "aqa-partial-credit", item.reference,
                                                      item.response, derive_seed(seed, item.item_id));
            double mean = 0.0;
            for (double s : scores) mean += s;
            mean /= scores.empty() ? 1.0 : static_cast<double>(scores.size());
            credit = std::clamp(mean / 5.0, 0.0, 1.0);
        }
        credit_sum += credit;
    }
    return 100.0 * credit_sum / static_cast<double>(items.size());
}

json ScoreReport::to_json() const {
    json j{{"columns", columns}, {"weights", weights}, {"final", final_score}};
    if (human_score) j["human_score"] = *human_score;
    return j;
}

ScoreReport aggregate_final(const std::map<std::string, double>& per_task_means,
                            std::optional<double> human_score,
                            const std::map<std::string, double>& weights) {
    ScoreReport report;
    report.columns = per_task_means;
    report.human_score = human_score;
    if (human_score) {
        if (*human_score < 0.0 || *human_score > 5.0) {
            throw PreconditionError("human score outside [0,5]");
        }
        report.columns["Hum"] = *human_score;
    }
    report.weights = weights;

    double sum = 0.0;
    for (const auto& [column, weight] : weights) {
        if (weight < 0.0) throw WeightSumError("negative weight for " + column);
        if (!report.columns.count(column)) {
            throw WeightSumError("weight names unknown column: " + column);
        }
        sum += weight;
    }
    if (std::abs(sum - 1.0) > 1e-9) {
        throw WeightSumError("weights sum to " + std::to_string(sum) + ", expected 1");
    }
    for (const auto& [column, weight] : weights) {
        report.final_score += weight * report.columns.at(column);
    }
    return report;
}

FixtureTables FixtureTables::from_file(const std::filesystem::path& path) {
    json doc = json::parse(read_file(path));
    FixtureTables tables;
    tables.dev_columns = doc.at("dev").at("columns").get<std::vector<std::string>>();
    for (const json& row : doc.at("dev").at("rows")) {
        tables.dev_rows.push_back(
            {row.at("name").get<std::string>(), row.at("values").get<std::vector<double>>()});
    }
    tables.test_columns = doc.at("test").at("columns").get<std::vector<std::string>>();
    for (const json& row : doc.at("test").at("rows")) {
        tables.test_rows.push_back(
            {row.at("name").get<std::string>(), row.at("values").get<std::vector<double>>()});
    }
    return tables;
}

namespace {

std::string format_score(double v) {
    if (std::isnan(v)) return "-";
    std::ostringstream out;
    out << std::fixed << std::setprecision(2) << v;
    return out.str();
}

void render_table(std::ostringstream& text, std::ostringstream& csv, const std::string& title,
                  const std::vector<std::string>& columns, const std::vector<FixtureRow>& rows) {
    text << title << "\n";
    csv << "# " << title << "\n";

    size_t name_width = 4;
    for (const FixtureRow& row : rows) name_width = std::max(name_width, row.name.size());

    text << std::left << std::setw(static_cast<int>(name_width) + 2) << "name";
    csv << "name";
    for (const std::string& c : columns) {
        text << std::right << std::setw(13) << c;
        csv << "," << c;
    }
    text << "\n";
    csv << "\n";

    for (const FixtureRow& row : rows) {
        text << std::left << std::setw(static_cast<int>(name_width) + 2) << row.name;
        csv << row.name;
        for (size_t i = 0; i < columns.size(); ++i) {
            if (i < row.values.size()) {
                text << std::right << std::setw(13) << format_score(row.values[i]);
                csv << "," << format_score(row.values[i]);
            } else {
                text << std::right << std::setw(13) << "-";
                csv << ",";
            }
        }
        text << "\n";
        csv << "\n";
    }
    text << "\n";
    csv << "\n";
}

}  // namespace

ReportDocument render_report(const std::map<std::string, double>& run_columns,
                             const std::optional<ScoreReport>& final_report,
                             const FixtureTables& fixtures) {
    std::ostringstream text, csv;

    std::vector<FixtureRow> dev_rows = fixtures.dev_rows;
    if (!run_columns.empty()) {
        FixtureRow run{"this run", {}};
        for (const std::string& c : fixtures.dev_columns) {
            auto it = run_columns.find(c);
            run.values.push_back(it != run_columns.end() ? it->second
                                                         : std::numeric_limits<double>::quiet_NaN());
        }
        dev_rows.push_back(std::move(run));
    }
    render_table(text, csv, "dev results (published values + this run)", fixtures.dev_columns,
                 dev_rows);

    std::vector<FixtureRow> test_rows = fixtures.test_rows;
    if (final_report) {
        FixtureRow run{"this run", {}};
        for (const std::string& c : fixtures.test_columns) {
            if (c == "Final Score") {
                run.values.push_back(final_report->final_score);
            } else {
                auto it = final_report->columns.find(c);
                run.values.push_back(it != final_report->columns.end()
                                         ? it->second
                                         : std::numeric_limits<double>::quiet_NaN());
            }
        }
        test_rows.push_back(std::move(run));
    }
    render_table(text, csv, "test results (published values + this run)", fixtures.test_columns,
                 test_rows);

    return ReportDocument{text.str(), csv.str()};
}

void write_eval_records(const std::filesystem::path& path, const std::vector<EvalRecord>& records) {
    std::vector<json> rows;
    rows.reserve(records.size());
    for (const auto& r : records) rows.push_back(r.to_json());
    write_jsonl(path, rows);
}

std::vector<EvalRecord> load_eval_records(const std::filesystem::path& path) {
    std::vector<EvalRecord> records;
    for (const json& row : read_jsonl(path).rows) records.push_back(EvalRecord::from_json(row));
    return records;
}

}  // namespace ieatforge::evalkit
