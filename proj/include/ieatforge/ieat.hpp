#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ieatforge/clients.hpp"
#include "ieatforge/corpus.hpp"

namespace ieatforge::ieat {

using clients::EmotionAnnotation;
using clients::EmotionTaxonomy;
using clients::Language;
using clients::ThinkTokens;

enum class QueryModality { text, asr_transcript };

std::string to_string(QueryModality m);
QueryModality modality_from_string(const std::string& s);

// Stage 1-1 alignment target: a natural LLM response to a query, later
// annotated with the emotion classified from its audio.
struct Stage11Sample {
    std::string id;
    std::string query_id;
    QueryModality modality = QueryModality::text;
    std::string user_text;  // what the LLM saw: query text or ASR transcript
    std::string response;
    Language language = Language::en;
    std::optional<AudioRef> audio;
    std::optional<EmotionAnnotation> emotion;
    std::string source;

    json to_json() const;
    static Stage11Sample from_json(const json& j);
};

// Rendered think-prefix: think-open + emotion statement + attribution stem,
// with the think-termination token deliberately omitted.
struct IEATPrefix {
    std::string template_id;
    std::string rendered;
    std::string emotion_label;

    json to_json() const;
    static IEATPrefix from_json(const json& j);
};

struct IEATSample {
    std::string id;
    int task_id = 0;  // 1 trajectory, 2 reasoning, 3 empathetic response
    std::string query_text;
    std::optional<AudioRef> query_audio;
    IEATPrefix prefix;
    std::string reasoning;
    std::string response;
    EmotionAnnotation emotion;
    std::string stage_tag = "stage1_2";  // stage1_1 | stage1_2
    Language language = Language::en;
    std::string system_prompt;

    json to_json() const;
    static IEATSample from_json(const json& j);
};

// --- registries (templates and task prompts are data, not code) ---

struct ThinkTemplate {
    std::string template_id;
    Language locale = Language::en;
    std::string text;  // must contain the {emotion} slot
};

class TemplateRegistry {
public:
    explicit TemplateRegistry(ThinkTokens tokens) : tokens_(std::move(tokens)) {}

    // Throws TemplateValidationError when the template embeds a think-close
    // token or lacks the {emotion} slot.
    void add(ThinkTemplate tmpl);
    const ThinkTemplate& get(const std::string& template_id, Language locale) const;
    const std::vector<ThinkTemplate>& all() const { return templates_; }
    const ThinkTokens& tokens() const { return tokens_; }

    // File format: JSON array of {template_id, locale, text}.
    static TemplateRegistry from_file(const std::filesystem::path& path, ThinkTokens tokens);

private:
    ThinkTokens tokens_;
    std::vector<ThinkTemplate> templates_;
};

class TaskPromptRegistry {
public:
    void add(int task_id, Language locale, std::string prompt);
    const std::string& get(int task_id, Language locale) const;  // UnknownTaskError
    bool has(int task_id) const;

    // File format: JSON object {"1": {"en": ..., "zh": ...}, ...}.
    static TaskPromptRegistry from_file(const std::filesystem::path& path);

private:
    std::map<std::pair<int, Language>, std::string> prompts_;
};

// --- operations ---

// Feeds the textual query or its ASR transcript into the LLM and records the
// natural response as alignment supervision.
Stage11Sample generate_alignment_target(const corpus::UtteranceRecord& record,
                                        QueryModality modality,
                                        const clients::GeneratorClient& llm,
                                        const clients::AsrClient& asr, uint64_t seed);

struct AnnotateResult {
    std::vector<Stage11Sample> samples;          // 100% annotated
    size_t dropped = 0;                          // classifier failures after retries
    std::map<std::string, size_t> distribution;  // label -> count
};

AnnotateResult annotate_emotions(const std::vector<Stage11Sample>& samples,
                                 const clients::EmotionClient& classifier,
                                 const std::string& fallback_label,
                                 const clients::RetryPolicy& retry);

IEATPrefix render_think_prefix(const EmotionAnnotation& emotion, const std::string& template_id,
                               Language locale, const TemplateRegistry& registry,
                               const EmotionTaxonomy& taxonomy);

struct Harvest {
    std::string reasoning;  // prefix body + continuation up to think-close
    std::string response;
};

// Throws MalformedContinuationError (no think-close before max_tokens) or
// EmptyTextError (empty response/reasoning); callers discard and count.
Harvest harvest_continuation(const IEATPrefix& prefix, const std::string& query_text,
                             const std::string& system_prompt,
                             const clients::GeneratorClient& llm, uint64_t seed,
                             const clients::Sampling& sampling);

IEATSample apply_task_prompt(IEATSample sample, int task_id, const TaskPromptRegistry& prompts);

// Pure invariant check; violations are data, not exceptions.
std::vector<std::string> validate_ieat_sample(const IEATSample& sample, const ThinkTokens& tokens,
                                              const EmotionTaxonomy& taxonomy);

void write_stage11_manifest(const std::filesystem::path& path,
                            const std::vector<Stage11Sample>& samples);
std::vector<Stage11Sample> load_stage11_manifest(const std::filesystem::path& path);

void write_ieat_manifest(const std::filesystem::path& path, const std::vector<IEATSample>& samples);
std::vector<IEATSample> load_ieat_manifest(const std::filesystem::path& path);

}  // namespace ieatforge::ieat
