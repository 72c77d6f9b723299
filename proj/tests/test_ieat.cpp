#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "ieatforge/ieat.hpp"
#include "ieatforge/util.hpp"
#include "test_support.hpp"

using namespace ieatforge;
using namespace ieatforge::ieat;
using clients::Language;

namespace {

TemplateRegistry default_templates() {
    return TemplateRegistry::from_file(test_support::data_dir() / "templates/think_templates.json",
                                       clients::ThinkTokens{});
}

TaskPromptRegistry default_prompts() {
    return TaskPromptRegistry::from_file(test_support::data_dir() / "prompts/task_prompts.json");
}

clients::EmotionAnnotation annotation(const std::string& label) {
    clients::EmotionAnnotation a;
    a.label = label;
    a.posterior[label] = 1.0;
    a.source = "test";
    return a;
}

struct Fixture {
    std::filesystem::path dir;
    std::shared_ptr<AudioStore> store;
    clients::MockSettings settings;
    clients::ClientSet cs;

    explicit Fixture(const std::string& name) : dir(test_support::tmp_dir(name)) {
        store = std::make_shared<AudioStore>(dir);
        settings.tts_speakers = {"spk"};
        cs = clients::make_mock_clients(settings, store, {{1, "r1"}, {2, "r2"}, {3, "r3"}});
    }
};

IEATSample build_valid_sample(Fixture& fx, const std::string& label, int task_id) {
    auto templates = default_templates();
    auto prompts = default_prompts();
    auto prefix = render_think_prefix(annotation(label), "t_default", Language::en, templates,
                                      fx.settings.taxonomy);
    auto harvest = harvest_continuation(prefix, "I had a long day at work.", "be kind",
                                        *fx.cs.generator, 5, {});
    IEATSample sample;
    sample.id = "sample#t" + std::to_string(task_id);
    sample.query_text = "I had a long day at work.";
    sample.prefix = prefix;
    sample.reasoning = harvest.reasoning;
    sample.response = harvest.response;
    sample.emotion = annotation(label);
    sample.language = Language::en;
    return apply_task_prompt(std::move(sample), task_id, prompts);
}

}  // namespace

TEST_CASE("template registry validates at registration time") {
    TemplateRegistry registry{clients::ThinkTokens{}};
    CHECK_THROWS_AS(registry.add({"bad", Language::en, "has {emotion} and </think> inside"}),
                    TemplateValidationError);
    CHECK_THROWS_AS(registry.add({"bad2", Language::en, "no slot at all"}),
                    TemplateValidationError);
    registry.add({"ok", Language::en, "feels {emotion} because"});
    CHECK(registry.get("ok", Language::en).text == "feels {emotion} because");
    CHECK_THROWS_AS(registry.get("ok", Language::zh), UnknownTemplateError);
    CHECK_THROWS_AS(registry.get("t_unknown", Language::en), UnknownTemplateError);
}

TEST_CASE("render_think_prefix produces the documented default rendering") {
    auto templates = default_templates();
    auto prefix = render_think_prefix(annotation("happy"), "t_default", Language::en, templates,
                                      clients::EmotionTaxonomy::defaults());
    CHECK(prefix.rendered == "<think>The user sounds happy, likely because");
    CHECK(prefix.emotion_label == "happy");
    CHECK(prefix.template_id == "t_default");

    auto zh = render_think_prefix(annotation("sad"), "t_default", Language::zh, templates,
                                  clients::EmotionTaxonomy::defaults());
    CHECK(zh.rendered == "<think>用户听起来很悲伤，可能是因为");
}

TEST_CASE("no registered template ever renders a think-close token") {
    auto templates = default_templates();
    auto taxonomy = clients::EmotionTaxonomy::defaults();
    for (const ThinkTemplate& tmpl : templates.all()) {
        for (const std::string& label : taxonomy.labels) {
            auto prefix = render_think_prefix(annotation(label), tmpl.template_id, tmpl.locale,
                                              templates, taxonomy);
            CHECK(prefix.rendered.find("</think>") == std::string::npos);
            CHECK(starts_with(prefix.rendered, "<think>"));
            CHECK(prefix.rendered.find(taxonomy.surface_form(label, tmpl.locale)) !=
                  std::string::npos);
        }
    }
}

TEST_CASE("generate_alignment_target covers both modalities") {
    Fixture fx("ieat_alignment");
    corpus::UtteranceRecord record;
    record.id = "u1";
    record.transcript = "How are you today?";
    record.language = Language::en;

    auto text_sample = generate_alignment_target(record, QueryModality::text, *fx.cs.generator,
                                                 *fx.cs.asr, 3);
    CHECK(text_sample.user_text == "How are you today?");
    CHECK_FALSE(text_sample.response.empty());
    auto again = generate_alignment_target(record, QueryModality::text, *fx.cs.generator,
                                           *fx.cs.asr, 3);
    CHECK(text_sample.response == again.response);

    // asr modality reads the transcript back through the mock ASR
    record.audio = fx.cs.tts->synthesize("spoken words here", "spk", Language::en);
    auto asr_sample = generate_alignment_target(record, QueryModality::asr_transcript,
                                                *fx.cs.generator, *fx.cs.asr, 3);
    CHECK(asr_sample.user_text == "spoken words here");

    corpus::UtteranceRecord bare;
    bare.id = "u2";
    bare.language = Language::en;
    CHECK_THROWS_AS(
        generate_alignment_target(bare, QueryModality::text, *fx.cs.generator, *fx.cs.asr, 1),
        PreconditionError);
    CHECK_THROWS_AS(generate_alignment_target(bare, QueryModality::asr_transcript,
                                              *fx.cs.generator, *fx.cs.asr, 1),
                    PreconditionError);
}

TEST_CASE("annotate_emotions echoes tags, falls back for text-only, accounts fully") {
    Fixture fx("ieat_annotate");
    std::vector<Stage11Sample> samples;
    const std::vector<std::string> tags = {"happy", "sad", "angry", "happy"};
    for (size_t i = 0; i < tags.size(); ++i) {
        Stage11Sample s;
        s.id = "s" + std::to_string(i);
        s.user_text = "text";
        s.response = "resp";
        s.audio = fx.store->put(clients::mock_tone("t" + std::to_string(i), "spk", 10, 8000),
                                AudioSidecar{"t", tags[i], "spk"});
        samples.push_back(std::move(s));
    }
    Stage11Sample text_only;
    text_only.id = "s_text";
    text_only.user_text = "no audio";
    text_only.response = "resp";
    samples.push_back(text_only);

    AnnotateResult r = annotate_emotions(samples, *fx.cs.emotion, "neutral", {3, 0});
    CHECK(r.samples.size() == 5);
    CHECK(r.dropped == 0);
    for (size_t i = 0; i < tags.size(); ++i) CHECK(r.samples[i].emotion->label == tags[i]);
    CHECK(r.samples[4].emotion->label == "neutral");

    size_t total = 0;
    for (const auto& [label, count] : r.distribution) total += count;
    CHECK(total == r.samples.size());
    CHECK(r.distribution.at("happy") == 2);
}

TEST_CASE("harvest_continuation keeps the prefix verbatim and strips delimiters") {
    Fixture fx("ieat_harvest");
    auto templates = default_templates();
    auto prefix = render_think_prefix(annotation("happy"), "t_default", Language::en, templates,
                                      fx.settings.taxonomy);
    auto harvest = harvest_continuation(prefix, "Great news today!", "", *fx.cs.generator, 11, {});
    CHECK(starts_with(harvest.reasoning, "The user sounds happy, likely because"));
    CHECK(harvest.reasoning.find("<think>") == std::string::npos);
    CHECK(harvest.reasoning.find("</think>") == std::string::npos);
    CHECK(harvest.response.find("</think>") == std::string::npos);
    CHECK_FALSE(harvest.response.empty());
}

TEST_CASE("harvest discard count equals injected failure count") {
    Fixture fx("ieat_harvest_fail");
    fx.settings.fail_texts = {"query 2", "query 5"};
    auto generator = clients::MockGeneratorClient(fx.settings);
    auto templates = default_templates();
    auto prefix = render_think_prefix(annotation("sad"), "t_default", Language::en, templates,
                                      fx.settings.taxonomy);
    size_t discards = 0;
    for (int i = 0; i < 8; ++i) {
        try {
            harvest_continuation(prefix, "query " + std::to_string(i), "", generator, 1, {});
        } catch (const MalformedContinuationError&) {
            ++discards;
        }
    }
    CHECK(discards == 2);
}

TEST_CASE("apply_task_prompt registry lookups") {
    Fixture fx("ieat_prompt");
    auto prompts = default_prompts();
    IEATSample sample = build_valid_sample(fx, "happy", 3);
    CHECK(sample.task_id == 3);
    CHECK(sample.system_prompt == prompts.get(3, Language::en));
    CHECK(sample.stage_tag == "stage1_2");

    IEATSample reapplied = apply_task_prompt(sample, 1, prompts);
    CHECK(reapplied.task_id == 1);
    CHECK_THROWS_AS(apply_task_prompt(sample, 0, prompts), UnknownTaskError);
    CHECK_THROWS_AS(apply_task_prompt(sample, 4, prompts), UnknownTaskError);
}

TEST_CASE("validate_ieat_sample passes pipeline output and flags constructed negatives") {
    Fixture fx("ieat_validate");
    clients::ThinkTokens tokens;
    auto taxonomy = clients::EmotionTaxonomy::defaults();

    IEATSample good = build_valid_sample(fx, "surprised", 2);
    CHECK(validate_ieat_sample(good, tokens, taxonomy).empty());

    IEATSample no_response = good;
    no_response.response = "";
    auto v1 = validate_ieat_sample(no_response, tokens, taxonomy);
    CHECK(std::find(v1.begin(), v1.end(), "empty response") != v1.end());

    IEATSample dropped_prefix = good;
    dropped_prefix.reasoning = "completely different reasoning";
    auto v2 = validate_ieat_sample(dropped_prefix, tokens, taxonomy);
    CHECK(std::find(v2.begin(), v2.end(), "prefix not verbatim left-substring of reasoning") !=
          v2.end());

    IEATSample stray_delimiter = good;
    stray_delimiter.reasoning += " </think> extra";
    auto v3 = validate_ieat_sample(stray_delimiter, tokens, taxonomy);
    CHECK_FALSE(v3.empty());

    IEATSample bad_task = good;
    bad_task.task_id = 7;
    auto v4 = validate_ieat_sample(bad_task, tokens, taxonomy);
    CHECK(std::find(v4.begin(), v4.end(), "task_id outside {1,2,3}") != v4.end());

    // the emotion surface form must appear inside the think span
    IEATSample wrong_label = good;
    wrong_label.emotion = annotation("angry");
    wrong_label.prefix.emotion_label = "angry";
    auto v5 = validate_ieat_sample(wrong_label, tokens, taxonomy);
    CHECK_FALSE(v5.empty());
}

TEST_CASE("every emitted sample holds one think-open and one think-close in order") {
    Fixture fx("ieat_delims");
    clients::ThinkTokens tokens;
    for (const std::string& label : {"happy", "sad", "fearful", "neutral"}) {
        for (int task = 1; task <= 3; ++task) {
            IEATSample s = build_valid_sample(fx, label, task);
            std::string serialized = tokens.open + s.reasoning + tokens.close + s.response;
            CHECK(count_occurrences(serialized, tokens.open) == 1);
            CHECK(count_occurrences(serialized, tokens.close) == 1);
            CHECK(serialized.find(tokens.open) < serialized.find(tokens.close));
            bool surface = false;
            for (const auto& form : fx.settings.taxonomy.surface_forms(label)) {
                surface |= s.reasoning.find(form) != std::string::npos;
            }
            CHECK(surface);
        }
    }
}

TEST_CASE("ieat manifests round-trip") {
    Fixture fx("ieat_manifest");
    std::vector<IEATSample> samples = {build_valid_sample(fx, "happy", 1),
                                       build_valid_sample(fx, "sad", 3)};
    write_ieat_manifest(fx.dir / "s.jsonl", samples);
    auto back = load_ieat_manifest(fx.dir / "s.jsonl");
    REQUIRE(back.size() == 2);
    CHECK(back[0].to_json() == samples[0].to_json());
    CHECK(back[1].to_json() == samples[1].to_json());
}
