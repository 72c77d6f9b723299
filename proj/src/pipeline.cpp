#include "ieatforge/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <iostream>
#include <set>

#include "ieatforge/dialogue.hpp"
#include "ieatforge/evalkit.hpp"
#include "ieatforge/ieat.hpp"
#include "ieatforge/instructions.hpp"
#include "ieatforge/sha256.hpp"
#include "ieatforge/util.hpp"

namespace ieatforge::pipeline {

using clients::Language;

json StageReport::to_json() const {
    return json{{"stage", stage}, {"skipped", skipped}, {"counts", counts}, {"outputs", outputs}};
}

Pipeline::Pipeline(PipelineConfig config) : config_(std::move(config)) {}

// --- stage graph ---

namespace {

const std::map<std::string, std::vector<std::string>>& stage_input_map() {
    static const std::map<std::string, std::vector<std::string>> inputs = {
        {"ingest", {}},
        {"stage11", {"pool.jsonl"}},
        {"annotate", {"stage11.jsonl"}},
        {"ieat", {"stage11_annotated.jsonl"}},
        {"dialogues", {"stage12.jsonl"}},
        {"instructions", {"stage12.jsonl"}},
        {"train", {"stage12_train.jsonl", "stage11_annotated.jsonl"}},
        {"eval", {"stage12_train.jsonl", "sessions.jsonl"}},
        {"report", {"eval/summary.json", "eval/score_report.json"}},
    };
    return inputs;
}

const std::map<std::string, std::vector<std::string>>& stage_output_map() {
    static const std::map<std::string, std::vector<std::string>> outputs = {
        {"ingest", {"pool.jsonl", "queries.jsonl"}},
        {"stage11", {"stage11.jsonl"}},
        {"annotate", {"stage11_annotated.jsonl", "emotion_distribution.json"}},
        {"ieat", {"stage12.jsonl"}},
        {"dialogues", {"sessions.jsonl", "task1_trajectory.jsonl"}},
        {"instructions",
         {"instructions.jsonl", "instructions_review.tsv", "stage12_train.jsonl",
          "concat_map.jsonl"}},
        {"train", {"train/training_log.jsonl", "train/checkpoint.bin", "train/decode_log.jsonl"}},
        {"eval", {"eval/records.jsonl", "eval/summary.json", "eval/score_report.json"}},
        {"report", {"report/report.txt", "report/report.csv"}},
    };
    return outputs;
}

}  // namespace

std::vector<std::string> Pipeline::stage_inputs(const std::string& stage) {
    auto it = stage_input_map().find(stage);
    if (it == stage_input_map().end()) throw ConfigValidationError("unknown stage: " + stage);
    return it->second;
}

std::vector<std::string> Pipeline::stage_outputs(const std::string& stage) {
    auto it = stage_output_map().find(stage);
    if (it == stage_output_map().end()) throw ConfigValidationError("unknown stage: " + stage);
    return it->second;
}

// --- digests / idempotence ---

std::string Pipeline::stage_input_digest(const std::string& stage) const {
    Sha256 h;
    h.update(stage);
    h.update(config_.to_json().dump());
    for (const std::string& rel : stage_inputs(stage)) {
        std::filesystem::path p = artifacts_dir() / rel;
        h.update(rel);
        h.update(sha256_hex(read_file(p)));
    }
    // external data the stage depends on
    auto add_file = [&](const std::filesystem::path& p) {
        h.update(p.string());
        h.update(sha256_hex(read_file(p)));
    };
    if (stage == "ingest") {
        for (const auto& m : config_.corpus_manifests) add_file(m);
        add_file(config_.query_file);
    } else if (stage == "ieat") {
        add_file(config_.template_file);
        add_file(config_.prompt_file);
    } else if (stage == "instructions") {
        add_file(config_.speaker_file);
    } else if (stage == "eval") {
        add_file(config_.aqa_file);
    } else if (stage == "report") {
        add_file(config_.fixtures_file);
    }
    auto digest = h.finish();
    static const char* hex = "0123456789abcdef";
    std::string out;
    for (uint8_t b : digest) {
        out += hex[b >> 4];
        out += hex[b & 0xf];
    }
    return out;
}

std::string Pipeline::output_digest(const std::vector<std::string>& outputs) const {
    Sha256 h;
    for (const std::string& rel : outputs) {
        h.update(rel);
        h.update(sha256_hex(read_file(artifacts_dir() / rel)));
    }
    auto digest = h.finish();
    static const char* hex = "0123456789abcdef";
    std::string out;
    for (uint8_t b : digest) {
        out += hex[b >> 4];
        out += hex[b & 0xf];
    }
    return out;
}

void Pipeline::require_upstream(const std::string& stage) const {
    for (const std::string& rel : stage_inputs(stage)) {
        if (!std::filesystem::exists(artifacts_dir() / rel)) {
            throw MissingUpstreamError("stage '" + stage + "' needs missing upstream artifact: " +
                                       rel);
        }
    }
}

StageReport Pipeline::run_stage(const std::string& stage) {
    if (std::find(stage_order().begin(), stage_order().end(), stage) == stage_order().end()) {
        throw ConfigValidationError("unknown stage: " + stage);
    }
    require_upstream(stage);
    const std::string input_digest = stage_input_digest(stage);
    const std::filesystem::path state_path = state_dir() / (stage + ".json");

    if (std::filesystem::exists(state_path)) {
        json state = json::parse(read_file(state_path), nullptr, false);
        if (!state.is_discarded() && state.value("input_digest", "") == input_digest) {
            bool outputs_present = true;
            for (const std::string& rel : stage_outputs(stage)) {
                outputs_present &= std::filesystem::exists(artifacts_dir() / rel);
            }
            if (outputs_present) {
                StageReport report;
                report.stage = stage;
                report.skipped = true;
                report.outputs = stage_outputs(stage);
                return report;
            }
        }
    }

    StageReport report;
    if (stage == "ingest") report = run_ingest();
    else if (stage == "stage11") report = run_stage11();
    else if (stage == "annotate") report = run_annotate();
    else if (stage == "ieat") report = run_ieat();
    else if (stage == "dialogues") report = run_dialogues();
    else if (stage == "instructions") report = run_instructions();
    else if (stage == "train") report = run_train();
    else if (stage == "eval") report = run_eval();
    else report = run_report();

    json state{{"stage", stage},
               {"input_digest", input_digest},
               {"output_digest", output_digest(report.outputs)}};
    write_file(state_dir() / (stage + ".json"), state.dump(2) + "\n");
    return report;
}

RunSummary Pipeline::run_all() {
    config_.validate();
    RunSummary summary;
    json timings = json::object();
    for (const std::string& stage : stage_order()) {
        auto t0 = std::chrono::steady_clock::now();
        StageReport report = run_stage(stage);
        auto t1 = std::chrono::steady_clock::now();
        timings[stage] = std::chrono::duration<double, std::milli>(t1 - t0).count();
        std::cerr << "[stage] " << stage << (report.skipped ? " skipped" : " done") << "\n";
        summary.reports.push_back(std::move(report));
    }
    summary.report_path = artifacts_dir() / "report/report.txt";

    json run_summary{{"seed", config_.seed}, {"stages", json::array()}};
    for (const StageReport& r : summary.reports) run_summary["stages"].push_back(r.to_json());
    write_file(config_.out_dir / "run_summary.json", run_summary.dump(2) + "\n");
    // wall times live outside the deterministic artifact tree
    write_file(config_.out_dir / "timings.json", timings.dump(2) + "\n");
    return summary;
}

// --- clients ---

clients::MockSettings Pipeline::mock_settings() const {
    clients::MockSettings settings;
    settings.think_tokens = config_.think_tokens;
    settings.taxonomy = config_.taxonomy;
    settings.tts_rate_chars_per_s = config_.tts_rate_chars_per_s;
    settings.tts_sample_rate_hz = config_.tts_sample_rate_hz;
    settings.judge_dimensions = config_.judge_dimensions;
    settings.tts_speakers = config_.query_speakers;
    if (!config_.speaker_file.empty() && std::filesystem::exists(config_.speaker_file)) {
        for (const std::string& line : split(read_file(config_.speaker_file), '\n')) {
            std::string id = trim(line);
            if (!id.empty()) settings.tts_speakers.push_back(id);
        }
    }
    return settings;
}

std::map<int, std::string> Pipeline::load_rubrics() const {
    std::map<int, std::string> rubrics;
    for (int task = 1; task <= 3; ++task) {
        std::filesystem::path p = config_.rubric_dir / ("task" + std::to_string(task) + ".txt");
        if (std::filesystem::exists(p)) rubrics[task] = read_file(p);
    }
    return rubrics;
}

clients::ClientSet Pipeline::make_clients() const {
    auto store = std::make_shared<AudioStore>(artifacts_dir());
    if (config_.mock) {
        return clients::make_mock_clients(mock_settings(), store, load_rubrics());
    }
    return clients::make_http_clients(mock_settings(), store, load_rubrics(), config_.retry);
}

// --- stages ---

StageReport Pipeline::run_ingest() {
    StageReport report;
    report.stage = "ingest";
    AudioStore store(artifacts_dir());
    clients::ClientSet cs = make_clients();

    std::vector<corpus::ManifestPart> parts;
    size_t corpus_rows = 0, corpus_skipped = 0, materialized = 0;
    for (const auto& manifest : config_.corpus_manifests) {
        std::string name = manifest.stem().string();
        if (name == "manifest") name = manifest.parent_path().filename().string();
        corpus::LoadResult loaded = corpus::load_corpus({name, manifest});
        corpus_rows += loaded.records.size();
        corpus_skipped += loaded.skipped;
        corpus::MaterializeResult mat = corpus::materialize_audio(
            loaded.records, store, config_.tts_rate_chars_per_s, config_.tts_sample_rate_hz);
        materialized += mat.synthesized;
        for (auto& record : mat.records) record.meta["kind"] = "corpus";
        parts.push_back({name, std::move(mat.records)});
    }

    std::vector<corpus::QueryRecord> query_pool = corpus::load_query_manifest(config_.query_file);
    std::vector<corpus::QueryRecord> sampled =
        corpus::sample_queries(query_pool, config_.query_sample_count,
                               derive_seed(config_.seed, "corpus.sample_queries"),
                               corpus::default_query_filter(config_.query_max_chars));
    corpus::SynthesizeQueriesResult synthesized = corpus::synthesize_query_audio(
        sampled, *cs.tts,
        {config_.query_speakers, derive_seed(config_.seed, "corpus.speaker_policy")},
        config_.retry);
    corpus::write_query_manifest(artifacts_dir() / "queries.jsonl", synthesized.records);

    corpus::ManifestPart query_part;
    query_part.name = "queries";
    for (const corpus::QueryRecord& q : synthesized.records) {
        corpus::UtteranceRecord u;
        u.id = q.id;
        u.audio = q.audio;
        u.transcript = q.text;
        u.language = clients::detect_language(q.text);
        u.source = q.origin;
        u.meta["kind"] = "query";
        query_part.records.push_back(std::move(u));
    }
    parts.push_back(std::move(query_part));

    std::vector<corpus::UtteranceRecord> pool = corpus::merge_training_set(parts);
    corpus::write_manifest(artifacts_dir() / "pool.jsonl", pool);

    report.counts["corpus_rows"] = static_cast<int64_t>(corpus_rows);
    report.counts["corpus_skipped"] = static_cast<int64_t>(corpus_skipped);
    report.counts["materialized_audio"] = static_cast<int64_t>(materialized);
    report.counts["queries_sampled"] = static_cast<int64_t>(sampled.size());
    report.counts["queries_dropped"] = static_cast<int64_t>(synthesized.dropped);
    report.counts["pool_rows"] = static_cast<int64_t>(pool.size());
    report.outputs = stage_outputs("ingest");
    return report;
}

StageReport Pipeline::run_stage11() {
    StageReport report;
    report.stage = "stage11";
    clients::ClientSet cs = make_clients();

    std::vector<corpus::UtteranceRecord> pool = corpus::load_manifest(artifacts_dir() / "pool.jsonl");
    std::vector<ieat::Stage11Sample> samples;
    size_t discards = 0;
    for (const corpus::UtteranceRecord& record : pool) {
        auto kind = record.meta.find("kind");
        ieat::QueryModality modality = (kind != record.meta.end() && kind->second == "query")
                                           ? ieat::QueryModality::text
                                           : ieat::QueryModality::asr_transcript;
        try {
            samples.push_back(ieat::generate_alignment_target(
                record, modality, *cs.generator, *cs.asr,
                derive_seed(config_.seed, "stage11." + record.id)));
        } catch (const ForgeError& e) {
            std::cerr << "[warn] stage11 discard " << record.id << ": " << e.what() << "\n";
            ++discards;
        }
    }
    std::sort(samples.begin(), samples.end(),
              [](const auto& a, const auto& b) { return a.id < b.id; });
    ieat::write_stage11_manifest(artifacts_dir() / "stage11.jsonl", samples);

    report.counts["inputs"] = static_cast<int64_t>(pool.size());
    report.counts["outputs"] = static_cast<int64_t>(samples.size());
    report.counts["discards"] = static_cast<int64_t>(discards);
    report.outputs = stage_outputs("stage11");
    return report;
}

StageReport Pipeline::run_annotate() {
    StageReport report;
    report.stage = "annotate";
    clients::ClientSet cs = make_clients();

    std::vector<ieat::Stage11Sample> samples =
        ieat::load_stage11_manifest(artifacts_dir() / "stage11.jsonl");
    ieat::AnnotateResult annotated =
        ieat::annotate_emotions(samples, *cs.emotion, config_.fallback_emotion, config_.retry);
    ieat::write_stage11_manifest(artifacts_dir() / "stage11_annotated.jsonl", annotated.samples);

    json distribution(annotated.distribution);
    write_file(artifacts_dir() / "emotion_distribution.json", distribution.dump(2) + "\n");

    report.counts["inputs"] = static_cast<int64_t>(samples.size());
    report.counts["outputs"] = static_cast<int64_t>(annotated.samples.size());
    report.counts["discards"] = static_cast<int64_t>(annotated.dropped);
    report.outputs = stage_outputs("annotate");
    return report;
}

StageReport Pipeline::run_ieat() {
    StageReport report;
    report.stage = "ieat";
    clients::ClientSet cs = make_clients();
    ieat::TemplateRegistry templates =
        ieat::TemplateRegistry::from_file(config_.template_file, config_.think_tokens);
    ieat::TaskPromptRegistry prompts = ieat::TaskPromptRegistry::from_file(config_.prompt_file);

    std::vector<ieat::Stage11Sample> annotated =
        ieat::load_stage11_manifest(artifacts_dir() / "stage11_annotated.jsonl");

    std::vector<ieat::IEATSample> outputs;
    size_t discards = 0;
    size_t applications = 0;
    for (size_t i = 0; i < annotated.size(); ++i) {
        const ieat::Stage11Sample& sample = annotated[i];
        if (!sample.emotion) {
            ++discards;
            continue;
        }
        // uniform partition across the three tasks, round-robin in id order;
        // tasks_mode = "all" applies every task prompt to every sample
        std::vector<int> tasks;
        if (config_.tasks_mode == "all") {
            tasks = {1, 2, 3};
        } else {
            tasks = {static_cast<int>(i % 3) + 1};
        }
        for (int task_id : tasks) {
            ++applications;
            try {
                ieat::IEATPrefix prefix =
                    ieat::render_think_prefix(*sample.emotion, config_.template_id, sample.language,
                                              templates, config_.taxonomy);
                const std::string& system_prompt = prompts.get(task_id, sample.language);
                clients::Sampling sampling;
                sampling.max_tokens = config_.generation_max_tokens;
                ieat::Harvest harvest = ieat::harvest_continuation(
                    prefix, sample.user_text, system_prompt, *cs.generator,
                    derive_seed(config_.seed, "ieat." + sample.id + "." + std::to_string(task_id)),
                    sampling);

                ieat::IEATSample out;
                out.id = sample.id + "#t" + std::to_string(task_id);
                out.query_text = sample.user_text;
                out.query_audio = sample.audio;
                out.prefix = prefix;
                out.reasoning = harvest.reasoning;
                out.response = harvest.response;
                out.emotion = *sample.emotion;
                out.language = sample.language;
                out = ieat::apply_task_prompt(std::move(out), task_id, prompts);

                auto violations =
                    ieat::validate_ieat_sample(out, config_.think_tokens, config_.taxonomy);
                if (!violations.empty()) {
                    std::cerr << "[warn] invalid IEAT sample " << out.id << ": " << violations[0]
                              << "\n";
                    ++discards;
                    continue;
                }
                outputs.push_back(std::move(out));
            } catch (const ForgeError& e) {
                std::cerr << "[warn] ieat discard " << sample.id << ": " << e.what() << "\n";
                ++discards;
            }
        }
    }
    std::sort(outputs.begin(), outputs.end(),
              [](const auto& a, const auto& b) { return a.id < b.id; });
    ieat::write_ieat_manifest(artifacts_dir() / "stage12.jsonl", outputs);

    report.counts["inputs"] = static_cast<int64_t>(annotated.size());
    report.counts["task_applications"] = static_cast<int64_t>(applications);
    report.counts["outputs"] = static_cast<int64_t>(outputs.size());
    report.counts["discards"] = static_cast<int64_t>(discards);
    report.outputs = stage_outputs("ieat");
    return report;
}

StageReport Pipeline::run_dialogues() {
    StageReport report;
    report.stage = "dialogues";

    std::vector<ieat::IEATSample> stage12 =
        ieat::load_ieat_manifest(artifacts_dir() / "stage12.jsonl");
    std::vector<ieat::IEATSample> task3;
    for (const auto& s : stage12) {
        if (s.task_id == 3) task3.push_back(s);
    }

    std::vector<ieat::IEATSample> pool = dialogue::select_reorg_pool(
        task3, config_.reorg_fraction, derive_seed(config_.seed, "dialogue.select"));
    dialogue::AssembleResult assembled = dialogue::assemble_sessions(
        pool, config_.turn_mix, derive_seed(config_.seed, "dialogue.assemble"),
        config_.max_rejects);
    dialogue::write_session_manifest(artifacts_dir() / "sessions.jsonl", assembled.sessions);

    std::vector<json> targets;
    for (const auto& session : assembled.sessions) {
        targets.push_back(dialogue::emit_trajectory_target(session));
    }
    write_jsonl(artifacts_dir() / "task1_trajectory.jsonl", targets);

    size_t consumed = 0;
    for (const auto& s : assembled.sessions) consumed += s.turns.size();
    report.counts["task3_samples"] = static_cast<int64_t>(task3.size());
    report.counts["pool"] = static_cast<int64_t>(pool.size());
    report.counts["sessions"] = static_cast<int64_t>(assembled.sessions.size());
    report.counts["consumed"] = static_cast<int64_t>(consumed);
    report.counts["leftovers"] = static_cast<int64_t>(assembled.leftovers.size());
    report.counts["rejects"] = static_cast<int64_t>(assembled.rejects);
    report.outputs = stage_outputs("dialogues");
    return report;
}

StageReport Pipeline::run_instructions() {
    StageReport report;
    report.stage = "instructions";
    AudioStore store(artifacts_dir());
    clients::ClientSet cs = make_clients();

    std::vector<std::string> speaker_pool;
    for (const std::string& line : split(read_file(config_.speaker_file), '\n')) {
        std::string id = trim(line);
        if (!id.empty()) speaker_pool.push_back(id);
    }
    std::vector<std::string> speakers =
        instructions::pick_speakers(speaker_pool, config_.instruction_speaker_count,
                                    derive_seed(config_.seed, "instructions.speakers"));

    std::vector<instructions::InstructionRecord> all_records;
    for (int task_id : {1, 2}) {
        std::vector<instructions::InstructionRecord> records =
            instructions::generate_instruction_texts(
                task_id, *cs.generator, config_.instruction_target_count,
                config_.instruction_overgen_factor,
                derive_seed(config_.seed, "instructions.generate"));
        if (config_.review_import) {
            // merge reviewer decisions by id
            auto reviewed = instructions::import_review_file(*config_.review_import);
            std::map<std::string, std::string> status;
            for (const auto& r : reviewed) status[r.id] = r.review_status;
            for (auto& r : records) {
                auto it = status.find(r.id);
                if (it != status.end()) r.review_status = it->second;
            }
        } else {
            instructions::auto_accept(records, config_.instruction_target_count);
        }
        instructions::SynthesisResult synth = instructions::synthesize_instruction_audio(
            records, speakers, *cs.tts, derive_seed(config_.seed, "instructions.synthesize"),
            config_.retry);
        report.counts["task" + std::to_string(task_id) + "_rejected_tts"] =
            static_cast<int64_t>(synth.rejected);
        all_records.insert(all_records.end(), synth.records.begin(), synth.records.end());
    }
    instructions::export_review_file(artifacts_dir() / "instructions_review.tsv", all_records);
    instructions::write_instruction_manifest(artifacts_dir() / "instructions.jsonl", all_records);

    std::map<int, std::vector<const instructions::InstructionRecord*>> accepted_by_task;
    for (const auto& r : all_records) {
        if (r.review_status == "accepted" && r.audio) accepted_by_task[r.task_id].push_back(&r);
    }

    // concatenate instruction audio onto the stage 1-2 training audio for
    // tasks 1 and 2; the empathetic-response task is exempt
    std::vector<ieat::IEATSample> stage12 =
        ieat::load_ieat_manifest(artifacts_dir() / "stage12.jsonl");
    size_t concatenated = 0;
    std::vector<json> concat_map;
    for (ieat::IEATSample& sample : stage12) {
        if (sample.task_id == 3 || !sample.query_audio) continue;
        const auto& candidates = accepted_by_task[sample.task_id];
        if (candidates.empty()) continue;
        uint64_t pick = fnv1a64_mix(fnv1a64(sample.id),
                                    derive_seed(config_.seed, "instructions.concat"));
        const instructions::InstructionRecord& instr = *candidates[pick % candidates.size()];
        AudioRef query_ref = *sample.query_audio;
        sample.query_audio = instructions::concatenate_instruction(
            *instr.audio, query_ref, config_.concat_gap_ms, store);
        concat_map.push_back(json{{"sample_id", sample.id},
                                  {"instruction_id", instr.id},
                                  {"instruction_uri", instr.audio->uri},
                                  {"query_uri", query_ref.uri},
                                  {"out_uri", sample.query_audio->uri},
                                  {"gap_ms", config_.concat_gap_ms}});
        ++concatenated;
    }
    ieat::write_ieat_manifest(artifacts_dir() / "stage12_train.jsonl", stage12);
    write_jsonl(artifacts_dir() / "concat_map.jsonl", concat_map);

    int64_t accepted1 = 0, accepted2 = 0, task3_count = 0;
    for (const auto& r : all_records) {
        if (r.review_status != "accepted") continue;
        if (r.task_id == 1) ++accepted1;
        if (r.task_id == 2) ++accepted2;
        if (r.task_id == 3) ++task3_count;
    }
    report.counts["accepted_task1"] = accepted1;
    report.counts["accepted_task2"] = accepted2;
    report.counts["accepted_task3"] = task3_count;
    report.counts["speakers"] = static_cast<int64_t>(speakers.size());
    report.counts["concatenated"] = static_cast<int64_t>(concatenated);
    report.outputs = stage_outputs("instructions");
    return report;
}

StageReport Pipeline::run_train() {
    StageReport report;
    report.stage = "train";
    AudioStore store(artifacts_dir());
    clients::ClientSet cs = make_clients();

    std::vector<ieat::Stage11Sample> stage11 =
        ieat::load_stage11_manifest(artifacts_dir() / "stage11_annotated.jsonl");
    std::vector<ieat::IEATSample> stage12 =
        ieat::load_ieat_manifest(artifacts_dir() / "stage12_train.jsonl");

    trainkit::ByteTokenizer text_tokenizer;
    trainkit::SpeechQuantizer speech_tokenizer(config_.model.speech_vocab);

    auto load_audio = [&](const std::optional<AudioRef>& ref) -> std::optional<WavData> {
        if (!ref) return std::nullopt;
        return store.load(*ref);
    };
    auto build_example = [&](const trainkit::TokenizeInputs& in) {
        return tokenize_example(in, text_tokenizer, speech_tokenizer, config_.think_tokens,
                                config_.model.text_vocab);
    };

    // Stage 1 batch: alignment targets plus IEAT text targets, text-only.
    // Candidates are taken shortest-first so full supervision fits max_seq;
    // training prompts drop the system text (it is unsupervised context).
    std::vector<trainkit::TrainExample> stage1_candidates;
    for (const auto& sample : stage11) {
        trainkit::TokenizeInputs in;
        in.user_text = sample.user_text;
        in.response = sample.response;
        auto wav = load_audio(sample.audio);
        in.query_audio = wav ? &*wav : nullptr;
        in.stage_tag = "stage1_1";
        stage1_candidates.push_back(build_example(in));
    }
    for (const auto& sample : stage12) {
        trainkit::TokenizeInputs in;
        in.user_text = sample.query_text;
        in.reasoning = sample.reasoning;
        in.response = sample.response;
        auto wav = load_audio(sample.query_audio);
        in.query_audio = wav ? &*wav : nullptr;
        in.stage_tag = "stage1_2";
        stage1_candidates.push_back(build_example(in));
    }
    std::stable_sort(stage1_candidates.begin(), stage1_candidates.end(),
                     [](const auto& a, const auto& b) {
                         return a.input_ids.size() < b.input_ids.size();
                     });
    std::vector<trainkit::TrainExample> stage1_batch;
    for (const auto& ex : stage1_candidates) {
        if (stage1_batch.size() >= config_.batch_size) break;
        if (ex.input_ids.size() <= config_.max_seq) stage1_batch.push_back(ex);
    }

    // Stage 2 batch: joint text + speech targets; response speech comes from
    // the TTS stub so the Speak pathway has supervision. The prefix part is
    // sized first and only the shortlisted samples get response synthesis.
    std::vector<std::pair<size_t, size_t>> stage2_shortlist;  // (prefix len, stage12 index)
    for (size_t i = 0; i < stage12.size(); ++i) {
        if (!stage12[i].query_audio) continue;
        trainkit::TokenizeInputs in;
        in.user_text = stage12[i].query_text;
        in.reasoning = stage12[i].reasoning;
        in.response = stage12[i].response;
        auto wav = load_audio(stage12[i].query_audio);
        in.query_audio = wav ? &*wav : nullptr;
        in.stage_tag = "stage2";
        stage2_shortlist.emplace_back(build_example(in).input_ids.size(), i);
    }
    std::stable_sort(stage2_shortlist.begin(), stage2_shortlist.end());

    std::vector<trainkit::TrainExample> stage2_batch;
    std::vector<int> decode_prompt;
    for (const auto& [prefix_len, index] : stage2_shortlist) {
        if (stage2_batch.size() >= config_.batch_size) break;
        if (prefix_len > config_.max_seq) break;
        const ieat::IEATSample& sample = stage12[index];
        trainkit::TokenizeInputs in;
        in.user_text = sample.query_text;
        in.reasoning = sample.reasoning;
        in.response = sample.response;
        auto query_wav = load_audio(sample.query_audio);
        in.query_audio = query_wav ? &*query_wav : nullptr;
        AudioRef response_ref =
            cs.tts->synthesize(sample.response, config_.query_speakers[0],
                               sample.language == Language::zh ? Language::zh : Language::en);
        WavData response_wav = store.load(response_ref);
        in.response_audio = &response_wav;
        trainkit::TrainExample ex = build_example(in);
        if (ex.input_ids.size() > config_.max_seq) continue;
        if (decode_prompt.empty()) {
            trainkit::TokenizeInputs prefix_only = in;
            prefix_only.response_audio = nullptr;
            decode_prompt = build_example(prefix_only).input_ids;
        }
        stage2_batch.push_back(std::move(ex));
    }
    if (stage1_batch.empty() || stage2_batch.empty()) {
        throw MissingUpstreamError(
            "not enough samples fit max_seq to build training batches; raise train.max_seq");
    }

    trainkit::Model model(config_.model, derive_seed(config_.seed, "train.init"));
    trainkit::Optimizer optimizer(config_.optimizer);
    trainkit::PartitionOptions stage1_options{true, config_.update_text_head};
    trainkit::PartitionOptions stage2_options{config_.middle_trainable_stage2,
                                              config_.update_text_head};
    trainkit::Partition stage1_partition = trainkit::partition_layers(
        config_.model, config_.model.frozen_bottom, config_.model.tuned_top, stage1_options);
    trainkit::Partition stage2_partition = trainkit::partition_layers(
        config_.model, config_.model.frozen_bottom, config_.model.tuned_top, stage2_options);
    trainkit::StepOptions step_options;
    step_options.state_dump_dir = artifacts_dir() / "train";

    std::vector<json> log;
    log.push_back(json{{"event", "init"}, {"digests", model.group_digests()}});
    for (int step = 0; step < config_.stage1_steps; ++step) {
        double loss = trainkit::stage1_step(model, stage1_batch, optimizer, stage1_partition,
                                            step_options);
        log.push_back(json{{"phase", "stage1"}, {"step", step}, {"text_loss", loss}});
    }
    auto before_stage2 = model.group_digests();
    for (int step = 0; step < config_.stage2_steps; ++step) {
        auto [text_loss, speech_loss] = trainkit::stage2_step(
            model, stage2_batch, optimizer, stage2_partition, config_.lambda_speech, step_options);
        log.push_back(json{{"phase", "stage2"},
                           {"step", step},
                           {"text_loss", text_loss},
                           {"speech_loss", speech_loss},
                           {"total", text_loss + config_.lambda_speech * speech_loss}});
    }
    auto after_stage2 = model.group_digests();
    json frozen_check = json::object();
    for (int l = 0; l < config_.model.frozen_bottom; ++l) {
        std::string group = "layer." + std::to_string(l);
        frozen_check[group] = before_stage2.at(group) == after_stage2.at(group);
    }
    log.push_back(json{{"event", "frozen_check"}, {"unchanged", frozen_check},
                       {"digests", after_stage2}});
    write_jsonl(artifacts_dir() / "train/training_log.jsonl", log);

    trainkit::save_checkpoint(artifacts_dir() / "train/checkpoint.bin", model, optimizer,
                              config_.stage1_steps + config_.stage2_steps);

    trainkit::DecodeResult decoded = trainkit::streaming_decode(
        model, decode_prompt, config_.model.mtp_depth, /*max_tokens=*/24);
    std::vector<json> decode_log = decoded.log;
    decode_log.push_back(json{{"event", "summary"},
                              {"emitted", decoded.tokens.size()},
                              {"forward_passes", decoded.forward_passes},
                              {"tokens_per_forward", config_.model.mtp_depth}});
    write_jsonl(artifacts_dir() / "train/decode_log.jsonl", decode_log);

    report.counts["stage1_examples"] = static_cast<int64_t>(stage1_batch.size());
    report.counts["stage2_examples"] = static_cast<int64_t>(stage2_batch.size());
    report.counts["stage1_steps"] = config_.stage1_steps;
    report.counts["stage2_steps"] = config_.stage2_steps;
    report.counts["decoded_tokens"] = static_cast<int64_t>(decoded.tokens.size());
    report.outputs = stage_outputs("train");
    return report;
}

StageReport Pipeline::run_eval() {
    StageReport report;
    report.stage = "eval";
    clients::ClientSet cs = make_clients();
    std::map<int, std::string> rubrics = load_rubrics();

    std::vector<ieat::IEATSample> stage12 =
        ieat::load_ieat_manifest(artifacts_dir() / "stage12_train.jsonl");
    std::vector<dialogue::DialogueSession> sessions =
        dialogue::load_session_manifest(artifacts_dir() / "sessions.jsonl");

    // Task 1 judges trajectory sessions; tasks 2 and 3 judge single turns.
    // Buckets are capped per (task, language) so both locales get judged.
    const size_t per_lang_cap = std::max<size_t>(1, config_.eval_max_items_per_task / 2);
    std::map<int, std::vector<evalkit::JudgedItem>> items;
    std::map<std::pair<int, Language>, size_t> bucket_sizes;
    auto offer = [&](int task_id, evalkit::JudgedItem item) {
        auto& count = bucket_sizes[{task_id, item.language}];
        if (count >= per_lang_cap) return;
        ++count;
        items[task_id].push_back(std::move(item));
    };
    for (const auto& session : sessions) {
        evalkit::JudgedItem item;
        item.item_id = session.session_id;
        item.language = session.turns.front().language;
        item.dialogue = dialogue::session_transcript(session);
        item.response = session.turns.back().response;
        offer(1, std::move(item));
    }
    for (const auto& sample : stage12) {
        if (sample.task_id != 2 && sample.task_id != 3) continue;
        evalkit::JudgedItem item;
        item.item_id = sample.id;
        item.language = sample.language;
        item.dialogue = "user: " + sample.query_text + "\n";
        item.response = sample.response;
        offer(sample.task_id, std::move(item));
    }

    std::vector<evalkit::EvalRecord> all_records;
    std::map<std::string, double> columns;
    std::map<std::string, double> task_means;
    json missing = json::object();
    for (int task_id = 1; task_id <= 3; ++task_id) {
        evalkit::ScoreTaskResult scored = evalkit::score_task(
            items[task_id], *cs.judge, task_id, rubrics.at(task_id),
            derive_seed(config_.seed, "eval.task" + std::to_string(task_id)), config_.retry);
        missing["task" + std::to_string(task_id)] = scored.missing;
        std::vector<evalkit::EvalRecord> zh, en;
        for (const auto& r : scored.records) {
            (r.language == Language::zh ? zh : en).push_back(r);
        }
        columns["Task" + std::to_string(task_id) + "-zh"] = evalkit::mean_overall(zh);
        columns["Task" + std::to_string(task_id) + "-en"] = evalkit::mean_overall(en);
        task_means["Task" + std::to_string(task_id)] = evalkit::mean_overall(scored.records);
        all_records.insert(all_records.end(), scored.records.begin(), scored.records.end());
    }
    evalkit::write_eval_records(artifacts_dir() / "eval/records.jsonl", all_records);

    // AQA: the offline harness answers with the reference on a seeded ~60%
    // of items and with a generator reply otherwise, so both credit paths
    // run; scores here say nothing about the published numbers.
    std::vector<evalkit::AqaItem> aqa_zh, aqa_en;
    for (const json& row : read_jsonl(config_.aqa_file).rows) {
        evalkit::AqaItem item;
        item.item_id = row.at("item_id").get<std::string>();
        item.language = clients::language_from_string(row.at("language").get<std::string>());
        item.reference = row.at("reference").get<std::string>();
        uint64_t h = fnv1a64_mix(fnv1a64(item.item_id), derive_seed(config_.seed, "eval.aqa"));
        if (h % 100 < 60) {
            item.response = item.reference;
        } else {
            clients::GenerationRequest request;
            request.messages = {{"user", row.at("question").get<std::string>()}};
            request.seed = derive_seed(config_.seed, "eval.aqa." + item.item_id);
            item.response = cs.generator->generate(request).response;
        }
        (item.language == Language::zh ? aqa_zh : aqa_en).push_back(std::move(item));
    }
    columns["AQA-zh"] = aqa_zh.empty() ? 0.0 : evalkit::score_aqa(aqa_zh);
    columns["AQA-en"] = aqa_en.empty() ? 0.0 : evalkit::score_aqa(aqa_en);

    evalkit::ScoreReport final_report =
        evalkit::aggregate_final(task_means, config_.human_score, config_.final_weights);

    json summary{{"columns", columns}, {"missing", missing}};
    write_file(artifacts_dir() / "eval/summary.json", summary.dump(2) + "\n");
    write_file(artifacts_dir() / "eval/score_report.json", final_report.to_json().dump(2) + "\n");

    report.counts["judged_items"] = static_cast<int64_t>(all_records.size());
    report.counts["aqa_items"] = static_cast<int64_t>(aqa_zh.size() + aqa_en.size());
    report.outputs = stage_outputs("eval");
    return report;
}

StageReport Pipeline::run_report() {
    StageReport report;
    report.stage = "report";

    json summary = json::parse(read_file(artifacts_dir() / "eval/summary.json"));
    json score_report = json::parse(read_file(artifacts_dir() / "eval/score_report.json"));
    evalkit::FixtureTables fixtures = evalkit::FixtureTables::from_file(config_.fixtures_file);

    std::map<std::string, double> columns =
        summary.at("columns").get<std::map<std::string, double>>();
    evalkit::ScoreReport final_report;
    final_report.columns = score_report.at("columns").get<std::map<std::string, double>>();
    final_report.weights = score_report.at("weights").get<std::map<std::string, double>>();
    final_report.final_score = score_report.at("final").get<double>();
    if (score_report.contains("human_score")) {
        final_report.human_score = score_report.at("human_score").get<double>();
    }

    evalkit::ReportDocument doc = evalkit::render_report(columns, final_report, fixtures);
    write_file(artifacts_dir() / "report/report.txt", doc.text);
    write_file(artifacts_dir() / "report/report.csv", doc.csv);

    report.counts["dev_rows"] = static_cast<int64_t>(fixtures.dev_rows.size()) + 1;
    report.counts["test_rows"] = static_cast<int64_t>(fixtures.test_rows.size()) + 1;
    report.outputs = stage_outputs("report");
    return report;
}

}  // namespace ieatforge::pipeline
