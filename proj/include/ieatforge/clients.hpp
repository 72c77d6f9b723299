#pragma once

#include <chrono>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "ieatforge/audio_store.hpp"
#include "ieatforge/errors.hpp"
#include "ieatforge/jsonl.hpp"

namespace ieatforge::clients {

// --- shared vocabulary ---

enum class Language { zh, en };

std::string to_string(Language lang);
Language language_from_string(const std::string& s);
Language detect_language(const std::string& text);

// Delimiters of the generator's internal reasoning span. Configurable token
// strings; everything downstream treats them as opaque markers.
struct ThinkTokens {
    std::string open = "<think>";
    std::string close = "</think>";
};

// Emotion label set plus per-locale surface forms (the wording that gets
// rendered into think bodies). The label itself is the en surface form.
struct EmotionTaxonomy {
    std::vector<std::string> labels;
    std::map<std::string, std::string> zh_surface;

    bool contains(const std::string& label) const;
    std::string surface_form(const std::string& label, Language lang) const;
    // All registered surface forms of a label, across locales.
    std::vector<std::string> surface_forms(const std::string& label) const;

    static EmotionTaxonomy defaults();
};

// --- generator ---

struct ChatMessage {
    std::string role;  // system | user | assistant
    std::string text;
};

struct Sampling {
    double temperature = 0.7;
    int max_tokens = 512;
};

struct GenerationRequest {
    std::vector<ChatMessage> messages;
    std::optional<std::string> assistant_prefix;
    Sampling sampling;
    uint64_t seed = 0;

    // Enforces the type invariants: non-empty messages, valid roles, and a
    // prefix that holds the think block open (open token without close).
    void validate(const ThinkTokens& tokens) const;
};

enum class FinishReason { stop, length };

struct GenerationResult {
    std::string reasoning;  // between think-open and think-close, delimiters stripped
    std::string response;   // after think-close
    FinishReason finish_reason = FinishReason::stop;
    std::string raw_continuation;  // verbatim model output, for diagnostics
};

// Splits prefix + continuation on the think delimiters. Throws
// MalformedContinuationError when an open prefix never gets closed or when
// stray delimiters remain after the split.
GenerationResult split_generation(const std::string& assistant_prefix,
                                  const std::string& continuation, const ThinkTokens& tokens);

class GeneratorClient {
public:
    virtual ~GeneratorClient() = default;
    virtual GenerationResult generate(const GenerationRequest& request) const = 0;
    virtual const ThinkTokens& think_tokens() const = 0;
};

// --- emotion ---

struct EmotionAnnotation {
    std::string label;
    std::map<std::string, double> posterior;
    std::string source;

    void validate(const EmotionTaxonomy& taxonomy) const;
    json to_json() const;
    static EmotionAnnotation from_json(const json& j);
};

// --- TTS / ASR / emotion / judge interfaces ---

class TtsClient {
public:
    virtual ~TtsClient() = default;
    virtual AudioRef synthesize(const std::string& text, const std::string& speaker_id,
                                Language language) const = 0;
};

class AsrClient {
public:
    virtual ~AsrClient() = default;
    virtual std::string transcribe(const AudioRef& audio) const = 0;
};

class EmotionClient {
public:
    virtual ~EmotionClient() = default;
    virtual EmotionAnnotation classify_emotion(const AudioRef& audio) const = 0;
};

class JudgeClient {
public:
    virtual ~JudgeClient() = default;
    // Returns one score in [0,5] per judge dimension.
    virtual std::vector<double> judge(int task_id, const std::string& rubric,
                                      const std::string& dialogue, const std::string& response,
                                      uint64_t seed) const = 0;
    virtual int dimensions() const = 0;
};

// --- retry policy ---

struct RetryPolicy {
    int attempts = 3;
    int backoff_ms = 100;  // doubled per retry; 0 in tests
};

// Retries fn on TransportError with exponential backoff. Malformed
// continuations and precondition failures pass through untouched.
template <typename F>
auto with_retries(F&& fn, const RetryPolicy& policy) -> decltype(fn()) {
    int delay = policy.backoff_ms;
    for (int attempt = 1;; ++attempt) {
        try {
            return fn();
        } catch (const TransportError&) {
            if (attempt >= policy.attempts) throw;
            if (delay > 0) std::this_thread::sleep_for(std::chrono::milliseconds(delay));
            delay *= 2;
        }
    }
}

// --- mocks ---

// Shared knobs for the mock fleet. fail_texts forces a TransportError (TTS)
// or a missing think-close (generator) for exact input texts, so tests can
// exercise discard paths deterministically.
struct MockSettings {
    ThinkTokens think_tokens;
    EmotionTaxonomy taxonomy = EmotionTaxonomy::defaults();
    int tts_rate_chars_per_s = 10;
    int tts_sample_rate_hz = 16000;
    std::vector<std::string> tts_speakers;
    int judge_dimensions = 3;
    std::set<std::string> fail_texts;
};

// Deterministic tone pattern keyed by hash(text, speaker_id); duration is
// ceil(codepoints / rate) seconds.
WavData mock_tone(const std::string& text, const std::string& speaker_id, int rate_chars_per_s,
                  int sample_rate_hz);

class MockGeneratorClient : public GeneratorClient {
public:
    explicit MockGeneratorClient(MockSettings settings) : settings_(std::move(settings)) {}
    GenerationResult generate(const GenerationRequest& request) const override;
    const ThinkTokens& think_tokens() const override { return settings_.think_tokens; }

private:
    MockSettings settings_;
};

class MockTtsClient : public TtsClient {
public:
    MockTtsClient(MockSettings settings, std::shared_ptr<const AudioStore> store)
        : settings_(std::move(settings)), store_(std::move(store)) {}
    AudioRef synthesize(const std::string& text, const std::string& speaker_id,
                        Language language) const override;

private:
    MockSettings settings_;
    std::shared_ptr<const AudioStore> store_;
};

// Perfect ASR: echoes the transcript from the sidecar metadata.
class MockAsrClient : public AsrClient {
public:
    explicit MockAsrClient(std::shared_ptr<const AudioStore> store) : store_(std::move(store)) {}
    std::string transcribe(const AudioRef& audio) const override;

private:
    std::shared_ptr<const AudioStore> store_;
};

// Echoes the sidecar emotion tag with posterior 1.0; untagged audio falls
// back to "neutral".
class MockEmotionClient : public EmotionClient {
public:
    MockEmotionClient(MockSettings settings, std::shared_ptr<const AudioStore> store)
        : settings_(std::move(settings)), store_(std::move(store)) {}
    EmotionAnnotation classify_emotion(const AudioRef& audio) const override;

private:
    MockSettings settings_;
    std::shared_ptr<const AudioStore> store_;
};

class MockJudgeClient : public JudgeClient {
public:
    MockJudgeClient(MockSettings settings, std::map<int, std::string> rubrics)
        : settings_(std::move(settings)), rubrics_(std::move(rubrics)) {}
    std::vector<double> judge(int task_id, const std::string& rubric, const std::string& dialogue,
                              const std::string& response, uint64_t seed) const override;
    int dimensions() const override { return settings_.judge_dimensions; }

private:
    MockSettings settings_;
    std::map<int, std::string> rubrics_;
};

// --- HTTP clients ---
// Wire format: role-tagged message arrays as JSON over HTTP POST; audio
// travels as 16-bit PCM WAV bytes. Endpoints and keys come from the
// GENERATOR_URL / TTS_URL / ASR_URL / EMOTION_URL / JUDGE_URL and *_API_KEY
// environment variables.

struct HttpEndpoint {
    std::string url;      // e.g. http://host:port
    std::string api_key;  // sent as Authorization: Bearer <key> when set
};

HttpEndpoint endpoint_from_env(const std::string& url_var, const std::string& key_var);

class HttpGeneratorClient : public GeneratorClient {
public:
    HttpGeneratorClient(HttpEndpoint endpoint, ThinkTokens tokens, RetryPolicy retry)
        : endpoint_(std::move(endpoint)), tokens_(std::move(tokens)), retry_(retry) {}
    GenerationResult generate(const GenerationRequest& request) const override;
    const ThinkTokens& think_tokens() const override { return tokens_; }

private:
    HttpEndpoint endpoint_;
    ThinkTokens tokens_;
    RetryPolicy retry_;
};

class HttpTtsClient : public TtsClient {
public:
    HttpTtsClient(HttpEndpoint endpoint, std::shared_ptr<const AudioStore> store, RetryPolicy retry)
        : endpoint_(std::move(endpoint)), store_(std::move(store)), retry_(retry) {}
    AudioRef synthesize(const std::string& text, const std::string& speaker_id,
                        Language language) const override;

private:
    HttpEndpoint endpoint_;
    std::shared_ptr<const AudioStore> store_;
    RetryPolicy retry_;
};

class HttpAsrClient : public AsrClient {
public:
    HttpAsrClient(HttpEndpoint endpoint, std::shared_ptr<const AudioStore> store, RetryPolicy retry)
        : endpoint_(std::move(endpoint)), store_(std::move(store)), retry_(retry) {}
    std::string transcribe(const AudioRef& audio) const override;

private:
    HttpEndpoint endpoint_;
    std::shared_ptr<const AudioStore> store_;
    RetryPolicy retry_;
};

class HttpEmotionClient : public EmotionClient {
public:
    HttpEmotionClient(HttpEndpoint endpoint, std::shared_ptr<const AudioStore> store,
                      EmotionTaxonomy taxonomy, RetryPolicy retry)
        : endpoint_(std::move(endpoint)),
          store_(std::move(store)),
          taxonomy_(std::move(taxonomy)),
          retry_(retry) {}
    EmotionAnnotation classify_emotion(const AudioRef& audio) const override;

private:
    HttpEndpoint endpoint_;
    std::shared_ptr<const AudioStore> store_;
    EmotionTaxonomy taxonomy_;
    RetryPolicy retry_;
};

// Out-of-range scores from a real judge are clamped into [0,5] with a
// logged warning rather than rejected.
class HttpJudgeClient : public JudgeClient {
public:
    HttpJudgeClient(HttpEndpoint endpoint, std::map<int, std::string> rubrics, int dims,
                    RetryPolicy retry)
        : endpoint_(std::move(endpoint)), rubrics_(std::move(rubrics)), dims_(dims), retry_(retry) {}
    std::vector<double> judge(int task_id, const std::string& rubric, const std::string& dialogue,
                              const std::string& response, uint64_t seed) const override;
    int dimensions() const override { return dims_; }

private:
    HttpEndpoint endpoint_;
    std::map<int, std::string> rubrics_;
    int dims_;
    RetryPolicy retry_;
};

// --- aggregate ---

struct ClientSet {
    std::shared_ptr<GeneratorClient> generator;
    std::shared_ptr<TtsClient> tts;
    std::shared_ptr<AsrClient> asr;
    std::shared_ptr<EmotionClient> emotion;
    std::shared_ptr<JudgeClient> judge;
};

ClientSet make_mock_clients(const MockSettings& settings, std::shared_ptr<const AudioStore> store,
                            std::map<int, std::string> judge_rubrics);
ClientSet make_http_clients(const MockSettings& settings, std::shared_ptr<const AudioStore> store,
                            std::map<int, std::string> judge_rubrics, RetryPolicy retry);

}  // namespace ieatforge::clients
