#include "ieatforge/config.hpp"

#include <cmath>

#include "ieatforge/toml_lite.hpp"
#include "ieatforge/util.hpp"

namespace ieatforge::pipeline {

namespace {

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
    std::filesystem::path path(p);
    return path.is_absolute() ? path : base / path;
}

const json* find(const json& doc, const std::string& table) {
    auto it = doc.find(table);
    return it != doc.end() ? &*it : nullptr;
}

template <typename T>
T get_or(const json* table, const std::string& key, T fallback) {
    if (!table) return fallback;
    auto it = table->find(key);
    if (it == table->end()) return fallback;
    return it->get<T>();
}

}  // namespace

PipelineConfig PipelineConfig::from_file(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) {
        throw ConfigValidationError("config file not found: " + path.string());
    }
    json doc = load_toml_file(path);
    return from_toml(doc, std::filesystem::absolute(path).parent_path());
}

PipelineConfig PipelineConfig::from_toml(const json& doc, const std::filesystem::path& base_dir) {
    PipelineConfig cfg;

    const json* run = find(doc, "run");
    cfg.seed = static_cast<uint64_t>(get_or<int64_t>(run, "seed", 20250810));
    cfg.out_dir = resolve(base_dir, get_or<std::string>(run, "out_dir", "out"));
    cfg.mock = get_or<bool>(run, "mock", true);

    const json* cl = find(doc, "clients");
    cfg.think_tokens.open = get_or<std::string>(cl, "think_open", "<think>");
    cfg.think_tokens.close = get_or<std::string>(cl, "think_close", "</think>");
    cfg.retry.attempts = static_cast<int>(get_or<int64_t>(cl, "retry_attempts", 3));
    cfg.retry.backoff_ms = static_cast<int>(get_or<int64_t>(cl, "retry_backoff_ms", 100));
    cfg.judge_dimensions = static_cast<int>(get_or<int64_t>(cl, "judge_dimensions", 3));
    cfg.max_in_flight = static_cast<int>(get_or<int64_t>(cl, "max_in_flight", 8));

    if (const json* tax = find(doc, "taxonomy")) {
        if (tax->contains("labels")) {
            cfg.taxonomy.labels = tax->at("labels").get<std::vector<std::string>>();
        }
        if (tax->contains("zh_surface")) {
            cfg.taxonomy.zh_surface =
                tax->at("zh_surface").get<std::map<std::string, std::string>>();
        }
    }

    const json* tts = find(doc, "tts");
    cfg.tts_rate_chars_per_s = static_cast<int>(get_or<int64_t>(tts, "rate_chars_per_s", 20));
    cfg.tts_sample_rate_hz = static_cast<int>(get_or<int64_t>(tts, "sample_rate_hz", 8000));

    const json* corpus = find(doc, "corpus");
    if (corpus && corpus->contains("manifests")) {
        for (const json& m : corpus->at("manifests")) {
            cfg.corpus_manifests.push_back(resolve(base_dir, m.get<std::string>()));
        }
    }
    if (corpus && corpus->contains("query_file")) {
        cfg.query_file = resolve(base_dir, corpus->at("query_file").get<std::string>());
    }
    cfg.query_sample_count = static_cast<size_t>(get_or<int64_t>(corpus, "query_sample_count", 80));
    cfg.query_max_chars = static_cast<size_t>(get_or<int64_t>(corpus, "query_max_chars", 200));
    cfg.query_speakers =
        get_or<std::vector<std::string>>(corpus, "query_speakers", std::vector<std::string>{});

    const json* ieat_cfg = find(doc, "ieat");
    if (ieat_cfg && ieat_cfg->contains("template_file")) {
        cfg.template_file = resolve(base_dir, ieat_cfg->at("template_file").get<std::string>());
    }
    if (ieat_cfg && ieat_cfg->contains("prompt_file")) {
        cfg.prompt_file = resolve(base_dir, ieat_cfg->at("prompt_file").get<std::string>());
    }
    cfg.template_id = get_or<std::string>(ieat_cfg, "template_id", "t_default");
    cfg.fallback_emotion = get_or<std::string>(ieat_cfg, "fallback_emotion", "neutral");
    cfg.tasks_mode = get_or<std::string>(ieat_cfg, "tasks_mode", "partition");
    cfg.generation_max_tokens =
        static_cast<int>(get_or<int64_t>(ieat_cfg, "generation_max_tokens", 512));

    const json* dia = find(doc, "dialogue");
    cfg.reorg_fraction = get_or<double>(dia, "fraction", 0.40);
    if (dia && dia->contains("turn_mix")) {
        auto mix = dia->at("turn_mix").get<std::vector<double>>();
        if (mix.size() != 3) throw ConfigValidationError("turn_mix needs exactly 3 entries (2,3,4)");
        cfg.turn_mix = {{2, mix[0]}, {3, mix[1]}, {4, mix[2]}};
    }
    cfg.max_rejects = static_cast<int>(get_or<int64_t>(dia, "max_rejects", 200));

    const json* instr = find(doc, "instructions");
    cfg.instruction_target_count = static_cast<int>(get_or<int64_t>(instr, "target_count", 500));
    cfg.instruction_overgen_factor = get_or<double>(instr, "overgen_factor", 1.2);
    cfg.instruction_speaker_count =
        static_cast<size_t>(get_or<int64_t>(instr, "speaker_count", 50));
    if (instr && instr->contains("speaker_file")) {
        cfg.speaker_file = resolve(base_dir, instr->at("speaker_file").get<std::string>());
    }
    cfg.concat_gap_ms = static_cast<int>(get_or<int64_t>(instr, "gap_ms", 200));
    if (instr && instr->contains("review_import")) {
        cfg.review_import = resolve(base_dir, instr->at("review_import").get<std::string>());
    }

    const json* train = find(doc, "train");
    cfg.model.total_layers = static_cast<int>(get_or<int64_t>(train, "total_layers", 4));
    cfg.model.frozen_bottom = static_cast<int>(get_or<int64_t>(train, "frozen_bottom", 2));
    cfg.model.tuned_top = static_cast<int>(get_or<int64_t>(train, "tuned_top", 2));
    cfg.model.hidden_dim = static_cast<int>(get_or<int64_t>(train, "hidden_dim", 32));
    cfg.model.head_count = static_cast<int>(get_or<int64_t>(train, "head_count", 2));
    cfg.model.text_vocab = static_cast<int>(get_or<int64_t>(train, "text_vocab", 256));
    cfg.model.speech_vocab = static_cast<int>(get_or<int64_t>(train, "speech_vocab", 64));
    cfg.model.mtp_depth = static_cast<int>(get_or<int64_t>(train, "mtp_depth", 2));
    cfg.model.speech_adapter_dim =
        static_cast<int>(get_or<int64_t>(train, "speech_adapter_dim", 16));
    cfg.model.max_mtp_depth = static_cast<int>(get_or<int64_t>(train, "max_mtp_depth", 4));
    cfg.optimizer.kind = get_or<std::string>(train, "optimizer", "sgd");
    cfg.optimizer.learning_rate = get_or<double>(train, "learning_rate", 0.2);
    cfg.stage1_steps = static_cast<int>(get_or<int64_t>(train, "stage1_steps", 30));
    cfg.stage2_steps = static_cast<int>(get_or<int64_t>(train, "stage2_steps", 12));
    cfg.batch_size = static_cast<size_t>(get_or<int64_t>(train, "batch_size", 4));
    cfg.lambda_speech = get_or<double>(train, "lambda_speech", 1.0);
    cfg.max_seq = static_cast<size_t>(get_or<int64_t>(train, "max_seq", 384));
    cfg.middle_trainable_stage2 = get_or<bool>(train, "middle_trainable_stage2", false);
    cfg.update_text_head = get_or<bool>(train, "update_text_head", true);

    const json* ev = find(doc, "eval");
    if (ev && ev->contains("rubric_dir")) {
        cfg.rubric_dir = resolve(base_dir, ev->at("rubric_dir").get<std::string>());
    }
    if (ev && ev->contains("aqa_file")) {
        cfg.aqa_file = resolve(base_dir, ev->at("aqa_file").get<std::string>());
    }
    cfg.eval_max_items_per_task =
        static_cast<size_t>(get_or<int64_t>(ev, "max_items_per_task", 24));
    if (ev && ev->contains("human_score")) cfg.human_score = ev->at("human_score").get<double>();
    if (ev) {
        for (const char* key : {"Task1", "Task2", "Task3", "Hum"}) {
            std::string weight_key = std::string("weight_") + to_lower(key);
            if (ev->contains(weight_key)) cfg.final_weights[key] = ev->at(weight_key).get<double>();
        }
    }
    if (cfg.final_weights.empty()) {
        if (cfg.human_score) {
            cfg.final_weights = {{"Task1", 0.25}, {"Task2", 0.25}, {"Task3", 0.25}, {"Hum", 0.25}};
        } else {
            cfg.final_weights = {{"Task1", 1.0 / 3}, {"Task2", 1.0 / 3}, {"Task3", 1.0 / 3}};
        }
    }

    const json* report = find(doc, "report");
    if (report && report->contains("fixtures_file")) {
        cfg.fixtures_file = resolve(base_dir, report->at("fixtures_file").get<std::string>());
    }

    return cfg;
}

void PipelineConfig::validate() const {
    auto require_file = [](const std::filesystem::path& p, const std::string& what) {
        if (p.empty()) throw ConfigValidationError(what + " is not configured");
        if (!std::filesystem::exists(p)) {
            throw ConfigValidationError(what + " does not exist: " + p.string());
        }
    };
    if (corpus_manifests.empty()) throw ConfigValidationError("no corpus manifests configured");
    for (const auto& m : corpus_manifests) require_file(m, "corpus manifest");
    require_file(query_file, "query file");
    require_file(template_file, "template file");
    require_file(prompt_file, "prompt file");
    require_file(speaker_file, "speaker file");
    require_file(rubric_dir, "rubric dir");
    require_file(aqa_file, "AQA file");
    require_file(fixtures_file, "fixtures file");
    if (review_import) require_file(*review_import, "review import file");

    if (reorg_fraction <= 0.0 || reorg_fraction > 1.0) {
        throw ConfigValidationError("dialogue fraction must be in (0,1]");
    }
    double mix_sum = 0.0;
    for (const auto& [turns, p] : turn_mix) {
        if (p < 0) throw ConfigValidationError("turn_mix entries must be >= 0");
        mix_sum += p;
        (void)turns;
    }
    if (std::abs(mix_sum - 1.0) > 1e-9) throw ConfigValidationError("turn_mix must sum to 1");
    if (instruction_target_count < 0) throw ConfigValidationError("target_count must be >= 0");
    if (instruction_overgen_factor < 1.0) {
        throw ConfigValidationError("overgen_factor must be >= 1");
    }
    if (query_speakers.empty()) throw ConfigValidationError("no query speakers configured");
    if (batch_size == 0) throw ConfigValidationError("batch_size must be >= 1");
    if (tts_rate_chars_per_s <= 0 || tts_sample_rate_hz <= 0) {
        throw ConfigValidationError("tts rate and sample rate must be positive");
    }

    try {
        model.validate();
    } catch (const InvalidSpecError& e) {
        throw ConfigValidationError(std::string("model spec invalid: ") + e.what());
    }

    double weight_sum = 0.0;
    for (const auto& [name, w] : final_weights) {
        if (w < 0) throw ConfigValidationError("negative final weight for " + name);
        weight_sum += w;
    }
    if (std::abs(weight_sum - 1.0) > 1e-9) {
        throw ConfigValidationError("final weights must sum to 1");
    }
    if (!taxonomy.contains(fallback_emotion)) {
        throw ConfigValidationError("fallback emotion outside taxonomy");
    }
    if (tasks_mode != "partition" && tasks_mode != "all") {
        throw ConfigValidationError("tasks_mode must be 'partition' or 'all'");
    }
}

json PipelineConfig::to_json() const {
    json weights(final_weights);
    json manifests = json::array();
    for (const auto& m : corpus_manifests) manifests.push_back(m.string());
    json mix = json::object();
    for (const auto& [turns, p] : turn_mix) mix[std::to_string(turns)] = p;
    json j{{"seed", seed},
           {"mock", mock},
           {"think_open", think_tokens.open},
           {"think_close", think_tokens.close},
           {"taxonomy", taxonomy.labels},
           {"judge_dimensions", judge_dimensions},
           {"tts_rate_chars_per_s", tts_rate_chars_per_s},
           {"tts_sample_rate_hz", tts_sample_rate_hz},
           {"corpus_manifests", manifests},
           {"query_file", query_file.string()},
           {"query_sample_count", query_sample_count},
           {"query_max_chars", query_max_chars},
           {"query_speakers", query_speakers},
           {"template_file", template_file.string()},
           {"prompt_file", prompt_file.string()},
           {"template_id", template_id},
           {"fallback_emotion", fallback_emotion},
           {"tasks_mode", tasks_mode},
           {"generation_max_tokens", generation_max_tokens},
           {"reorg_fraction", reorg_fraction},
           {"turn_mix", mix},
           {"max_rejects", max_rejects},
           {"instruction_target_count", instruction_target_count},
           {"instruction_overgen_factor", instruction_overgen_factor},
           {"instruction_speaker_count", instruction_speaker_count},
           {"speaker_file", speaker_file.string()},
           {"concat_gap_ms", concat_gap_ms},
           {"model", model.to_json()},
           {"optimizer_kind", optimizer.kind},
           {"learning_rate", optimizer.learning_rate},
           {"stage1_steps", stage1_steps},
           {"stage2_steps", stage2_steps},
           {"batch_size", batch_size},
           {"lambda_speech", lambda_speech},
           {"max_seq", max_seq},
           {"middle_trainable_stage2", middle_trainable_stage2},
           {"update_text_head", update_text_head},
           {"rubric_dir", rubric_dir.string()},
           {"aqa_file", aqa_file.string()},
           {"eval_max_items_per_task", eval_max_items_per_task},
           {"final_weights", weights},
           {"fixtures_file", fixtures_file.string()}};
    if (human_score) j["human_score"] = *human_score;
    return j;
}

}  // namespace ieatforge::pipeline
