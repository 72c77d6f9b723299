#include "ieatforge/ieat.hpp"

#include <algorithm>
#include <iostream>

#include "ieatforge/util.hpp"

namespace ieatforge::ieat {

std::string to_string(QueryModality m) {
    return m == QueryModality::text ? "text" : "asr_transcript";
}

QueryModality modality_from_string(const std::string& s) {
    if (s == "text") return QueryModality::text;
    if (s == "asr_transcript") return QueryModality::asr_transcript;
    throw PreconditionError("unknown modality: " + s);
}

json Stage11Sample::to_json() const {
    json j{{"id", id},
           {"query_id", query_id},
           {"modality", ieat::to_string(modality)},
           {"user_text", user_text},
           {"response", response},
           {"language", clients::to_string(language)},
           {"source", source}};
    if (audio) j["audio"] = audio->to_json();
    if (emotion) j["emotion"] = emotion->to_json();
    return j;
}

Stage11Sample Stage11Sample::from_json(const json& j) {
    Stage11Sample s;
    s.id = j.at("id").get<std::string>();
    s.query_id = j.value("query_id", "");
    s.modality = modality_from_string(j.at("modality").get<std::string>());
    s.user_text = j.at("user_text").get<std::string>();
    s.response = j.at("response").get<std::string>();
    s.language = clients::language_from_string(j.at("language").get<std::string>());
    s.source = j.value("source", "");
    if (j.contains("audio") && !j["audio"].is_null()) s.audio = AudioRef::from_json(j["audio"]);
    if (j.contains("emotion") && !j["emotion"].is_null()) {
        s.emotion = EmotionAnnotation::from_json(j["emotion"]);
    }
    return s;
}

json IEATPrefix::to_json() const {
    return json{{"template_id", template_id}, {"rendered", rendered}, {"emotion_label", emotion_label}};
}

IEATPrefix IEATPrefix::from_json(const json& j) {
    IEATPrefix p;
    p.template_id = j.at("template_id").get<std::string>();
    p.rendered = j.at("rendered").get<std::string>();
    p.emotion_label = j.at("emotion_label").get<std::string>();
    return p;
}

json IEATSample::to_json() const {
    json j{{"id", id},
           {"task_id", task_id},
           {"query_text", query_text},
           {"prefix", prefix.to_json()},
           {"reasoning", reasoning},
           {"response", response},
           {"emotion", emotion.to_json()},
           {"stage_tag", stage_tag},
           {"language", clients::to_string(language)},
           {"system_prompt", system_prompt}};
    if (query_audio) j["query_audio"] = query_audio->to_json();
    return j;
}

IEATSample IEATSample::from_json(const json& j) {
    IEATSample s;
    s.id = j.at("id").get<std::string>();
    s.task_id = j.at("task_id").get<int>();
    s.query_text = j.at("query_text").get<std::string>();
    s.prefix = IEATPrefix::from_json(j.at("prefix"));
    s.reasoning = j.at("reasoning").get<std::string>();
    s.response = j.at("response").get<std::string>();
    s.emotion = EmotionAnnotation::from_json(j.at("emotion"));
    s.stage_tag = j.value("stage_tag", "stage1_2");
    s.language = clients::language_from_string(j.at("language").get<std::string>());
    s.system_prompt = j.value("system_prompt", "");
    if (j.contains("query_audio") && !j["query_audio"].is_null()) {
        s.query_audio = AudioRef::from_json(j["query_audio"]);
    }
    return s;
}

// --- registries ---

void TemplateRegistry::add(ThinkTemplate tmpl) {
    if (tmpl.text.find(tokens_.close) != std::string::npos) {
        throw TemplateValidationError("template " + tmpl.template_id +
                                      " contains the think-close token");
    }
    if (tmpl.text.find("{emotion}") == std::string::npos) {
        throw TemplateValidationError("template " + tmpl.template_id + " lacks the {emotion} slot");
    }
    templates_.push_back(std::move(tmpl));
}

const ThinkTemplate& TemplateRegistry::get(const std::string& template_id, Language locale) const {
    for (const ThinkTemplate& t : templates_) {
        if (t.template_id == template_id && t.locale == locale) return t;
    }
    throw UnknownTemplateError("no template " + template_id + " for locale " +
                               clients::to_string(locale));
}

TemplateRegistry TemplateRegistry::from_file(const std::filesystem::path& path, ThinkTokens tokens) {
    TemplateRegistry registry(std::move(tokens));
    json doc = json::parse(read_file(path));
    for (const json& row : doc) {
        registry.add(ThinkTemplate{row.at("template_id").get<std::string>(),
                                   clients::language_from_string(row.at("locale").get<std::string>()),
                                   row.at("text").get<std::string>()});
    }
    return registry;
}

void TaskPromptRegistry::add(int task_id, Language locale, std::string prompt) {
    prompts_[{task_id, locale}] = std::move(prompt);
}

const std::string& TaskPromptRegistry::get(int task_id, Language locale) const {
    auto it = prompts_.find({task_id, locale});
    if (it == prompts_.end()) {
        throw UnknownTaskError("no prompt registered for task " + std::to_string(task_id) +
                               " locale " + clients::to_string(locale));
    }
    return it->second;
}

bool TaskPromptRegistry::has(int task_id) const {
    return prompts_.count({task_id, Language::en}) || prompts_.count({task_id, Language::zh});
}

TaskPromptRegistry TaskPromptRegistry::from_file(const std::filesystem::path& path) {
    TaskPromptRegistry registry;
    json doc = json::parse(read_file(path));
    for (const auto& [task_key, locales] : doc.items()) {
        int task_id = std::stoi(task_key);
        for (const auto& [locale, prompt] : locales.items()) {
            registry.add(task_id, clients::language_from_string(locale), prompt.get<std::string>());
        }
    }
    return registry;
}

// --- operations ---

Stage11Sample generate_alignment_target(const corpus::UtteranceRecord& record,
                                        QueryModality modality,
                                        const clients::GeneratorClient& llm,
                                        const clients::AsrClient& asr, uint64_t seed) {
    Stage11Sample sample;
    sample.id = record.id + "#s11";
    sample.query_id = record.id;
    sample.modality = modality;
    sample.language = record.language;
    sample.audio = record.audio;
    sample.source = record.source;

    if (modality == QueryModality::text) {
        if (trim(record.transcript).empty()) {
            throw PreconditionError("text modality needs a transcript: " + record.id);
        }
        sample.user_text = record.transcript;
    } else {
        if (!record.audio) {
            throw PreconditionError("asr_transcript modality needs audio: " + record.id);
        }
        sample.user_text = asr.transcribe(*record.audio);
        if (trim(sample.user_text).empty()) {
            throw PreconditionError("ASR produced empty transcript for " + record.id);
        }
    }

    clients::GenerationRequest request;
    request.messages = {{"system", "You are a helpful, emotionally aware voice assistant."},
                        {"user", sample.user_text}};
    request.seed = seed;
    sample.response = llm.generate(request).response;
    if (sample.response.empty()) throw EmptyTextError("empty alignment response for " + record.id);
    return sample;
}

AnnotateResult annotate_emotions(const std::vector<Stage11Sample>& samples,
                                 const clients::EmotionClient& classifier,
                                 const std::string& fallback_label,
                                 const clients::RetryPolicy& retry) {
    AnnotateResult result;
    for (const Stage11Sample& sample : samples) {
        Stage11Sample out = sample;
        if (sample.audio) {
            try {
                out.emotion = clients::with_retries(
                    [&] { return classifier.classify_emotion(*sample.audio); }, retry);
            } catch (const ForgeError& e) {
                std::cerr << "[warn] dropping " << sample.id << ": " << e.what() << "\n";
                ++result.dropped;
                continue;
            }
        } else {
            EmotionAnnotation fallback;
            fallback.label = fallback_label;
            fallback.posterior[fallback_label] = 1.0;
            fallback.source = "fallback";
            out.emotion = fallback;
        }
        ++result.distribution[out.emotion->label];
        result.samples.push_back(std::move(out));
    }
    return result;
}

IEATPrefix render_think_prefix(const EmotionAnnotation& emotion, const std::string& template_id,
                               Language locale, const TemplateRegistry& registry,
                               const EmotionTaxonomy& taxonomy) {
    if (!taxonomy.contains(emotion.label)) {
        throw PreconditionError("emotion label outside taxonomy: " + emotion.label);
    }
    const ThinkTemplate& tmpl = registry.get(template_id, locale);
    std::string body = tmpl.text;
    std::string surface = taxonomy.surface_form(emotion.label, locale);
    size_t slot = body.find("{emotion}");
    body.replace(slot, std::string("{emotion}").size(), surface);

    IEATPrefix prefix;
    prefix.template_id = template_id;
    prefix.rendered = registry.tokens().open + body;
    prefix.emotion_label = emotion.label;
    return prefix;
}

Harvest harvest_continuation(const IEATPrefix& prefix, const std::string& query_text,
                             const std::string& system_prompt,
                             const clients::GeneratorClient& llm, uint64_t seed,
                             const clients::Sampling& sampling) {
    const ThinkTokens& tokens = llm.think_tokens();
    if (!starts_with(prefix.rendered, tokens.open) ||
        prefix.rendered.find(tokens.close) != std::string::npos) {
        throw PreconditionError("prefix does not hold an open think block");
    }

    clients::GenerationRequest request;
    if (!system_prompt.empty()) request.messages.push_back({"system", system_prompt});
    request.messages.push_back({"user", query_text});
    request.assistant_prefix = prefix.rendered;
    request.sampling = sampling;
    request.seed = seed;

    clients::GenerationResult result = llm.generate(request);
    if (result.response.empty()) throw EmptyTextError("empty response after continuation");
    if (result.reasoning.empty()) throw EmptyTextError("empty reasoning after continuation");

    const std::string prefix_body = trim(prefix.rendered.substr(tokens.open.size()));
    if (!starts_with(result.reasoning, prefix_body)) {
        throw MalformedContinuationError("prefix not a verbatim left-substring of the reasoning");
    }
    return Harvest{result.reasoning, result.response};
}

IEATSample apply_task_prompt(IEATSample sample, int task_id, const TaskPromptRegistry& prompts) {
    if (task_id < 1 || task_id > 3 || !prompts.has(task_id)) {
        throw UnknownTaskError("unknown task id: " + std::to_string(task_id));
    }
    sample.task_id = task_id;
    sample.system_prompt = prompts.get(task_id, sample.language);
    sample.stage_tag = "stage1_2";
    return sample;
}

std::vector<std::string> validate_ieat_sample(const IEATSample& sample, const ThinkTokens& tokens,
                                              const EmotionTaxonomy& taxonomy) {
    std::vector<std::string> violations;
    if (sample.task_id < 1 || sample.task_id > 3) violations.push_back("task_id outside {1,2,3}");
    if (sample.response.empty()) violations.push_back("empty response");
    if (sample.reasoning.empty()) violations.push_back("empty reasoning");
    if (sample.stage_tag != "stage1_1" && sample.stage_tag != "stage1_2") {
        violations.push_back("invalid stage_tag");
    }
    if (!taxonomy.contains(sample.emotion.label)) {
        violations.push_back("emotion label outside taxonomy");
    }
    if (sample.prefix.emotion_label != sample.emotion.label) {
        violations.push_back("prefix emotion differs from annotation");
    }

    if (!starts_with(sample.prefix.rendered, tokens.open)) {
        violations.push_back("prefix does not start with think-open");
    }
    if (sample.prefix.rendered.find(tokens.close) != std::string::npos) {
        violations.push_back("prefix contains think-close");
    }

    // Re-serialize the assistant turn and count delimiters: exactly one
    // open and one close, in order.
    const std::string serialized = tokens.open + sample.reasoning + tokens.close + sample.response;
    if (count_occurrences(serialized, tokens.open) != 1) {
        violations.push_back("think-open count != 1");
    }
    if (count_occurrences(serialized, tokens.close) != 1) {
        violations.push_back("think-close count != 1");
    }

    std::string prefix_body;
    if (starts_with(sample.prefix.rendered, tokens.open)) {
        prefix_body = trim(sample.prefix.rendered.substr(tokens.open.size()));
    }
    if (prefix_body.empty() || !starts_with(sample.reasoning, prefix_body)) {
        violations.push_back("prefix not verbatim left-substring of reasoning");
    }

    bool surface_found = false;
    for (const std::string& form : taxonomy.surface_forms(sample.emotion.label)) {
        if (sample.reasoning.find(form) != std::string::npos) {
            surface_found = true;
            break;
        }
    }
    if (!surface_found) violations.push_back("emotion surface form missing from think span");

    return violations;
}

// --- manifest io ---

void write_stage11_manifest(const std::filesystem::path& path,
                            const std::vector<Stage11Sample>& samples) {
    std::vector<json> rows;
    rows.reserve(samples.size());
    for (const auto& s : samples) rows.push_back(s.to_json());
    write_jsonl(path, rows);
}

std::vector<Stage11Sample> load_stage11_manifest(const std::filesystem::path& path) {
    std::vector<Stage11Sample> samples;
    for (const json& row : read_jsonl(path).rows) samples.push_back(Stage11Sample::from_json(row));
    return samples;
}

void write_ieat_manifest(const std::filesystem::path& path, const std::vector<IEATSample>& samples) {
    std::vector<json> rows;
    rows.reserve(samples.size());
    for (const auto& s : samples) rows.push_back(s.to_json());
    write_jsonl(path, rows);
}

std::vector<IEATSample> load_ieat_manifest(const std::filesystem::path& path) {
    std::vector<IEATSample> samples;
    for (const json& row : read_jsonl(path).rows) samples.push_back(IEATSample::from_json(row));
    return samples;
}

}  // namespace ieatforge::ieat
