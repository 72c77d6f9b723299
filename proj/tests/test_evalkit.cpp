#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "ieatforge/evalkit.hpp"
#include "ieatforge/util.hpp"
#include "test_support.hpp"

using namespace ieatforge;
using namespace ieatforge::evalkit;
using clients::Language;

namespace {

clients::MockSettings judge_settings() {
    clients::MockSettings s;
    s.judge_dimensions = 3;
    return s;
}

std::vector<JudgedItem> make_items(size_t n) {
    std::vector<JudgedItem> items;
    for (size_t i = 0; i < n; ++i) {
        items.push_back({"item_" + std::to_string(i), i % 2 ? Language::zh : Language::en,
                         "user: question " + std::to_string(i) + "\n",
                         "answer " + std::to_string(i)});
    }
    return items;
}

}  // namespace

TEST_CASE("score_task produces one in-range record per item, deterministically") {
    clients::MockJudgeClient judge(judge_settings(), {{1, "rubric"}});
    auto items = make_items(10);
    auto r1 = score_task(items, judge, 1, "rubric", 5, {3, 0});
    auto r2 = score_task(items, judge, 1, "rubric", 5, {3, 0});
    REQUIRE(r1.records.size() == 10);
    CHECK(r1.missing == 0);
    for (size_t i = 0; i < 10; ++i) {
        CHECK(r1.records[i].overall >= 0.0);
        CHECK(r1.records[i].overall <= 5.0);
        CHECK(r1.records[i].dimension_scores == r2.records[i].dimension_scores);
        double mean = 0.0;
        for (double s : r1.records[i].dimension_scores) mean += s;
        mean /= r1.records[i].dimension_scores.size();
        CHECK(std::abs(r1.records[i].overall - mean) <= 1e-9);
    }
}

TEST_CASE("overall is the arithmetic mean of the dimensions") {
    EvalRecord r;
    r.dimension_scores = {4.0, 5.0, 3.0};
    for (double s : r.dimension_scores) r.overall += s;
    r.overall /= 3.0;
    CHECK(r.overall == doctest::Approx(4.0));
}

namespace {

// judge that always fails transport for items in a deny list
class FlakyJudge : public clients::JudgeClient {
public:
    FlakyJudge(std::set<std::string> deny, int dims) : deny_(std::move(deny)), dims_(dims) {}
    std::vector<double> judge(int, const std::string&, const std::string& dialogue,
                              const std::string&, uint64_t) const override {
        for (const auto& d : deny_) {
            if (dialogue.find(d) != std::string::npos) throw TransportError("down");
        }
        return std::vector<double>(dims_, 4.0);
    }
    int dimensions() const override { return dims_; }

private:
    std::set<std::string> deny_;
    int dims_;
};

}  // namespace

TEST_CASE("judge failures become missing records, all-failed is an error") {
    auto items = make_items(5);
    FlakyJudge partial({"question 1", "question 3"}, 3);
    auto result = score_task(items, partial, 1, "r", 1, {2, 0});
    CHECK(result.records.size() == 3);
    CHECK(result.missing == 2);
    CHECK(mean_overall(result.records) == doctest::Approx(4.0));

    FlakyJudge down({"question"}, 3);
    CHECK_THROWS_AS(score_task(items, down, 1, "r", 1, {2, 0}), AllItemsFailedError);
}

TEST_CASE("score_aqa: three of four exact matches give 75") {
    std::vector<AqaItem> items = {
        {"a", Language::en, "Paris", "Paris"},
        {"b", Language::en, "seven", "seven"},
        {"c", Language::en, "blue", "green"},
        {"d", Language::en, "Mars", "Mars"},
    };
    CHECK(score_aqa(items) == doctest::Approx(75.0));
}

TEST_CASE("score_aqa folds case and punctuation") {
    std::vector<AqaItem> items = {{"a", Language::en, "Paris.", "paris"}};
    CHECK(score_aqa(items) == doctest::Approx(100.0));
}

TEST_CASE("score_aqa error paths") {
    CHECK_THROWS_AS(score_aqa({}), MissingReferenceError);
    std::vector<AqaItem> missing_ref = {{"a", Language::en, "Paris", ""}};
    CHECK_THROWS_AS(score_aqa(missing_ref), MissingReferenceError);
}

TEST_CASE("score_aqa optional judge-based partial credit") {
    clients::MockJudgeClient judge(judge_settings(), {{2, "rubric"}});
    std::vector<AqaItem> items = {{"a", Language::en, "wrong answer", "right answer"}};
    double with_credit = score_aqa(items, &judge, 5);
    CHECK(with_credit >= 0.0);
    CHECK(with_credit <= 100.0);
    CHECK(score_aqa(items) == doctest::Approx(0.0));  // strict match without the judge
}

TEST_CASE("aggregate_final reproduces the published winning row mean") {
    std::map<std::string, double> means = {{"Task1", 4.97}, {"Task2", 4.98}, {"Task3", 3.85}};
    std::map<std::string, double> weights = {
        {"Task1", 0.25}, {"Task2", 0.25}, {"Task3", 0.25}, {"Hum", 0.25}};
    ScoreReport report = aggregate_final(means, 3.79, weights);
    CHECK(std::abs(report.final_score - 4.3975) <= 1e-9);

    std::map<std::string, double> baseline = {{"Task1", 2.62}, {"Task2", 2.73}, {"Task3", 2.73}};
    ScoreReport b = aggregate_final(baseline, 2.96, weights);
    CHECK(std::abs(b.final_score - 2.76) <= 1e-9);
}

TEST_CASE("aggregate_final projection and validation") {
    std::map<std::string, double> means = {{"Task1", 4.5}, {"Task2", 3.0}, {"Task3", 2.0}};
    ScoreReport proj = aggregate_final(means, 1.0,
                                       {{"Task1", 1.0}, {"Task2", 0.0}, {"Task3", 0.0}, {"Hum", 0.0}});
    CHECK(proj.final_score == doctest::Approx(4.5));

    CHECK_THROWS_AS(aggregate_final(means, std::nullopt, {{"Task1", 0.6}, {"Task2", 0.6}}),
                    WeightSumError);
    CHECK_THROWS_AS(aggregate_final(means, std::nullopt, {{"Task1", 1.5}, {"Task2", -0.5}}),
                    WeightSumError);
    CHECK_THROWS_AS(aggregate_final(means, std::nullopt, {{"Task1", 0.5}, {"Hum", 0.5}}),
                    WeightSumError);  // Hum absent without a human score
}

TEST_CASE("aggregation is linear in the score vector") {
    auto rng = make_rng(4);
    std::map<std::string, double> weights = {{"Task1", 0.2}, {"Task2", 0.3}, {"Task3", 0.5}};
    for (int trial = 0; trial < 50; ++trial) {
        std::map<std::string, double> means = {{"Task1", (rng() % 500) / 100.0},
                                               {"Task2", (rng() % 500) / 100.0},
                                               {"Task3", (rng() % 500) / 100.0}};
        double alpha = (rng() % 100) / 100.0;
        std::map<std::string, double> scaled;
        for (auto& [k, v] : means) scaled[k] = alpha * v;
        double lhs = aggregate_final(scaled, std::nullopt, weights).final_score;
        double rhs = alpha * aggregate_final(means, std::nullopt, weights).final_score;
        CHECK(std::abs(lhs - rhs) <= 1e-9);
    }
}

TEST_CASE("fixture tables carry the published rows exactly") {
    FixtureTables fixtures =
        FixtureTables::from_file(test_support::data_dir() / "fixtures/paper_tables.json");
    REQUIRE(fixtures.dev_columns.size() == 8);

    const FixtureRow* ours = nullptr;
    const FixtureRow* qwen3 = nullptr;
    for (const auto& row : fixtures.dev_rows) {
        if (row.name == "Our Model") ours = &row;
        if (row.name == "Qwen3-omni") qwen3 = &row;
    }
    REQUIRE(ours != nullptr);
    CHECK(ours->values == std::vector<double>{4.98, 4.87, 4.98, 4.83, 4.53, 4.36, 37.38, 57.69});
    REQUIRE(qwen3 != nullptr);
    CHECK(qwen3->values[6] == 49.95);  // AQA-zh column

    const FixtureRow* winner = nullptr;
    for (const auto& row : fixtures.test_rows) {
        if (row.name == "Ours (1st)") winner = &row;
    }
    REQUIRE(winner != nullptr);
    CHECK(winner->values == std::vector<double>{4.97, 4.98, 3.85, 3.79, 4.27});
}

TEST_CASE("render_report with no run data is a header-plus-fixtures table") {
    FixtureTables fixtures =
        FixtureTables::from_file(test_support::data_dir() / "fixtures/paper_tables.json");
    ReportDocument doc = render_report({}, std::nullopt, fixtures);
    CHECK(doc.text.find("this run") == std::string::npos);
    CHECK(doc.text.find("Task1-zh") != std::string::npos);
    CHECK(doc.csv.find("Our Model,4.98,4.87,4.98,4.83,4.53,4.36,37.38,57.69") != std::string::npos);

    // deterministic and idempotent
    ReportDocument again = render_report({}, std::nullopt, fixtures);
    CHECK(doc.text == again.text);
    CHECK(doc.csv == again.csv);
}

TEST_CASE("eval records round-trip through JSON Lines") {
    auto dir = test_support::tmp_dir("evalkit_records");
    std::vector<EvalRecord> records(3);
    for (size_t i = 0; i < records.size(); ++i) {
        records[i].task_id = static_cast<int>(i % 3) + 1;
        records[i].language = i % 2 ? Language::zh : Language::en;
        records[i].item_id = "it" + std::to_string(i);
        records[i].dimension_scores = {1.0, 2.0, 4.5};
        records[i].overall = 2.5;
    }
    write_eval_records(dir / "records.jsonl", records);
    auto back = load_eval_records(dir / "records.jsonl");
    REQUIRE(back.size() == records.size());
    for (size_t i = 0; i < back.size(); ++i) CHECK(back[i].to_json() == records[i].to_json());
}
