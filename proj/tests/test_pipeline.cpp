#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <set>

#include "ieatforge/pipeline.hpp"
#include "ieatforge/util.hpp"
#include "test_support.hpp"

using namespace ieatforge;
using namespace ieatforge::pipeline;

namespace {

// Scaled-down run for fast integration tests; the acceptance suite runs the
// full-size recipe.
PipelineConfig small_config(const std::filesystem::path& out_dir) {
    PipelineConfig cfg;
    cfg.seed = 4242;
    cfg.out_dir = out_dir;
    cfg.mock = true;
    cfg.retry.backoff_ms = 0;
    cfg.tts_rate_chars_per_s = 40;
    cfg.tts_sample_rate_hz = 8000;
    cfg.corpus_manifests = {test_support::data_dir() / "mini_corpus/manifest.jsonl"};
    cfg.query_file = test_support::data_dir() / "queries/queries.jsonl";
    cfg.query_sample_count = 12;
    cfg.query_speakers = {"qspk_00", "qspk_01", "qspk_02"};
    cfg.template_file = test_support::data_dir() / "templates/think_templates.json";
    cfg.prompt_file = test_support::data_dir() / "prompts/task_prompts.json";
    cfg.speaker_file = test_support::data_dir() / "speakers.txt";
    cfg.instruction_target_count = 12;
    cfg.instruction_overgen_factor = 1.5;
    cfg.instruction_speaker_count = 50;
    cfg.rubric_dir = test_support::data_dir() / "rubrics";
    cfg.aqa_file = test_support::data_dir() / "aqa/aqa_dev.jsonl";
    cfg.eval_max_items_per_task = 6;
    cfg.fixtures_file = test_support::data_dir() / "fixtures/paper_tables.json";
    cfg.stage1_steps = 3;
    cfg.stage2_steps = 2;
    cfg.max_seq = 448;
    return cfg;
}

std::map<std::string, int64_t> counts_of(const RunSummary& summary, const std::string& stage) {
    for (const auto& report : summary.reports) {
        if (report.stage == stage) return report.counts;
    }
    FAIL("no stage report for " << stage);
    return {};
}

}  // namespace

TEST_CASE("default config file loads and validates") {
    PipelineConfig cfg = PipelineConfig::from_file(test_support::source_dir() / "configs/default.toml");
    CHECK_NOTHROW(cfg.validate());
    CHECK(cfg.instruction_target_count == 500);
    CHECK(cfg.instruction_speaker_count == 50);
    CHECK(cfg.reorg_fraction == doctest::Approx(0.40));
    CHECK(cfg.model.total_layers == 4);
    CHECK(cfg.model.frozen_bottom == 2);
    CHECK(cfg.model.tuned_top == 2);
    CHECK(cfg.model.mtp_depth == 2);
}

TEST_CASE("config validation catches broken settings") {
    auto dir = test_support::tmp_dir("pipeline_config");
    PipelineConfig cfg = small_config(dir / "out");

    PipelineConfig missing = cfg;
    missing.query_file = dir / "does_not_exist.jsonl";
    CHECK_THROWS_AS(missing.validate(), ConfigValidationError);

    PipelineConfig bad_fraction = cfg;
    bad_fraction.reorg_fraction = 1.5;
    CHECK_THROWS_AS(bad_fraction.validate(), ConfigValidationError);

    PipelineConfig bad_weights = cfg;
    bad_weights.final_weights = {{"Task1", 0.9}};
    CHECK_THROWS_AS(bad_weights.validate(), ConfigValidationError);

    PipelineConfig bad_mix = cfg;
    bad_mix.turn_mix = {{2, 0.9}, {3, 0.4}, {4, 0.1}};
    CHECK_THROWS_AS(bad_mix.validate(), ConfigValidationError);

    PipelineConfig bad_model = cfg;
    bad_model.model.frozen_bottom = 9;
    CHECK_THROWS_AS(bad_model.validate(), ConfigValidationError);
}

TEST_CASE("a stage refuses to run before its upstream exists") {
    auto dir = test_support::tmp_dir("pipeline_upstream");
    Pipeline pipeline(small_config(dir / "out"));
    CHECK_THROWS_AS(pipeline.run_stage("ieat"), MissingUpstreamError);
    CHECK_THROWS_AS(pipeline.run_stage("train"), MissingUpstreamError);
    CHECK_THROWS_AS(pipeline.run_stage("nonsense"), ConfigValidationError);
}

TEST_CASE("stage graph is acyclic and matches the documented order") {
    std::set<std::string> produced;
    for (const std::string& stage : stage_order()) {
        for (const std::string& input : Pipeline::stage_inputs(stage)) {
            CHECK_MESSAGE(produced.count(input) == 1,
                          "stage " << stage << " reads undeclared input " << input);
        }
        for (const std::string& output : Pipeline::stage_outputs(stage)) produced.insert(output);
    }
}

TEST_CASE("full mock run: accounting, idempotent rerun, resume equivalence") {
    auto dir = test_support::tmp_dir("pipeline_run");
    PipelineConfig cfg = small_config(dir / "out_a");

    Pipeline pipeline(cfg);
    RunSummary summary = pipeline.run_all();
    REQUIRE(summary.reports.size() == stage_order().size());

    // conservation: every stage accounts for its inputs
    auto stage11 = counts_of(summary, "stage11");
    CHECK(stage11.at("outputs") + stage11.at("discards") == stage11.at("inputs"));
    auto annotate = counts_of(summary, "annotate");
    CHECK(annotate.at("outputs") + annotate.at("discards") == annotate.at("inputs"));
    auto ieat_counts = counts_of(summary, "ieat");
    CHECK(ieat_counts.at("outputs") + ieat_counts.at("discards") ==
          ieat_counts.at("task_applications"));
    auto dialogues = counts_of(summary, "dialogues");
    CHECK(dialogues.at("consumed") + dialogues.at("leftovers") == dialogues.at("pool"));
    auto instructions = counts_of(summary, "instructions");
    CHECK(instructions.at("accepted_task1") == 12);
    CHECK(instructions.at("accepted_task2") == 12);
    CHECK(instructions.at("accepted_task3") == 0);

    // rerunning a completed stage is a digest-verified no-op
    auto before = read_file(dir / "out_a/artifacts/stage12.jsonl");
    StageReport rerun = pipeline.run_stage("ieat");
    CHECK(rerun.skipped);
    CHECK(read_file(dir / "out_a/artifacts/stage12.jsonl") == before);

    // interrupt-and-resume equals an uninterrupted run
    PipelineConfig resumed_cfg = small_config(dir / "out_b");
    Pipeline resumed(resumed_cfg);
    resumed.run_stage("ingest");
    resumed.run_stage("stage11");
    resumed.run_stage("annotate");  // "interrupted" here; run-all picks it up
    RunSummary resumed_summary = resumed.run_all();
    size_t skipped = 0;
    for (const auto& report : resumed_summary.reports) skipped += report.skipped;
    CHECK(skipped == 3);
    CHECK(test_support::first_tree_difference(dir / "out_a/artifacts", dir / "out_b/artifacts") ==
          "");
}

TEST_CASE("run summary excludes wall times; timings live separately") {
    auto dir = test_support::tmp_dir("pipeline_summary");
    PipelineConfig cfg = small_config(dir / "out");
    Pipeline pipeline(cfg);
    pipeline.run_all();
    json summary = json::parse(read_file(dir / "out/run_summary.json"));
    CHECK(summary.dump().find("time") == std::string::npos);
    CHECK(std::filesystem::exists(dir / "out/timings.json"));
}
