#include "ieatforge/clients.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <iostream>

#include "httplib.h"
#include "ieatforge/util.hpp"

namespace ieatforge::clients {

std::string to_string(Language lang) { return lang == Language::zh ? "zh" : "en"; }

Language language_from_string(const std::string& s) {
    if (s == "zh") return Language::zh;
    if (s == "en") return Language::en;
    throw PreconditionError("unknown language tag: " + s);
}

Language detect_language(const std::string& text) {
    return contains_cjk(text) ? Language::zh : Language::en;
}

// --- taxonomy ---

EmotionTaxonomy EmotionTaxonomy::defaults() {
    EmotionTaxonomy t;
    t.labels = {"angry", "disgusted", "fearful", "happy", "neutral",
                "sad",   "surprised", "other",   "unknown"};
    t.zh_surface = {{"angry", "生气"},     {"disgusted", "厌恶"}, {"fearful", "害怕"},
                    {"happy", "高兴"},     {"neutral", "平静"},   {"sad", "悲伤"},
                    {"surprised", "惊讶"}, {"other", "其他"},     {"unknown", "未知"}};
    return t;
}

bool EmotionTaxonomy::contains(const std::string& label) const {
    return std::find(labels.begin(), labels.end(), label) != labels.end();
}

std::string EmotionTaxonomy::surface_form(const std::string& label, Language lang) const {
    if (lang == Language::zh) {
        auto it = zh_surface.find(label);
        if (it != zh_surface.end()) return it->second;
    }
    return label;
}

std::vector<std::string> EmotionTaxonomy::surface_forms(const std::string& label) const {
    std::vector<std::string> forms = {label};
    auto it = zh_surface.find(label);
    if (it != zh_surface.end() && it->second != label) forms.push_back(it->second);
    return forms;
}

// --- generation request / splitting ---

void GenerationRequest::validate(const ThinkTokens& tokens) const {
    if (messages.empty()) throw PreconditionError("generation request has no messages");
    for (const ChatMessage& m : messages) {
        if (m.role != "system" && m.role != "user" && m.role != "assistant") {
            throw PreconditionError("invalid message role: " + m.role);
        }
    }
    if (assistant_prefix) {
        bool has_open = assistant_prefix->find(tokens.open) != std::string::npos;
        bool has_close = assistant_prefix->find(tokens.close) != std::string::npos;
        if (has_open && has_close) {
            throw PreconditionError("assistant prefix closes its own think block");
        }
    }
    if (sampling.temperature < 0) throw PreconditionError("temperature must be >= 0");
    if (sampling.max_tokens <= 0) throw PreconditionError("max_tokens must be > 0");
}

GenerationResult split_generation(const std::string& assistant_prefix,
                                  const std::string& continuation, const ThinkTokens& tokens) {
    GenerationResult result;
    result.raw_continuation = continuation;

    const std::string full = assistant_prefix + continuation;
    size_t open_pos = full.find(tokens.open);
    if (open_pos == std::string::npos) {
        // no think block at all
        if (full.find(tokens.close) != std::string::npos) {
            throw MalformedContinuationError("think-close without think-open");
        }
        result.response = trim(full);
        return result;
    }
    size_t close_pos = full.find(tokens.close, open_pos + tokens.open.size());
    if (close_pos == std::string::npos) {
        throw MalformedContinuationError("no think-close token before max_tokens");
    }
    result.reasoning =
        trim(full.substr(open_pos + tokens.open.size(), close_pos - open_pos - tokens.open.size()));
    result.response = trim(full.substr(close_pos + tokens.close.size()));
    if (result.response.find(tokens.open) != std::string::npos ||
        result.response.find(tokens.close) != std::string::npos ||
        result.reasoning.find(tokens.open) != std::string::npos) {
        throw MalformedContinuationError("stray think delimiter after split");
    }
    return result;
}

// --- emotion annotation ---

void EmotionAnnotation::validate(const EmotionTaxonomy& taxonomy) const {
    if (!taxonomy.contains(label)) throw PreconditionError("label outside taxonomy: " + label);
    double sum = 0.0;
    double best = -1.0;
    std::string best_label;
    for (const auto& [l, p] : posterior) {
        sum += p;
        if (p > best) {
            best = p;
            best_label = l;
        }
    }
    if (std::abs(sum - 1.0) > 1e-6) throw PreconditionError("posterior does not sum to 1");
    if (best_label != label) throw PreconditionError("label is not the posterior argmax");
}

json EmotionAnnotation::to_json() const {
    return json{{"label", label}, {"posterior", posterior}, {"source", source}};
}

EmotionAnnotation EmotionAnnotation::from_json(const json& j) {
    EmotionAnnotation a;
    a.label = j.at("label").get<std::string>();
    a.posterior = j.at("posterior").get<std::map<std::string, double>>();
    a.source = j.value("source", "");
    return a;
}

// --- mock generator ---

namespace {

const std::vector<std::string> kCauseEn = {
    "they just received some good news about their work",
    "something they had been waiting for finally happened",
    "a recent conversation did not go the way they hoped",
    "they are thinking back to an event from earlier today",
    "their plans changed at the last minute",
    "someone close to them said something unexpected",
    "they have been under pressure for several days",
    "a small detail reminded them of an old memory",
};

const std::vector<std::string> kCauseZh = {
    "他们刚刚收到了一条重要的消息",      "期待已久的事情终于有了结果",
    "最近的一次交流并不顺利",            "他们想起了今天早些时候发生的事情",
    "原本的计划在最后一刻被打乱了",      "身边的人说了一些出乎意料的话",
    "这几天他们一直承受着不小的压力",    "一个细节让他们想起了过去的经历",
};

const std::vector<std::string> kResponseEn = {
    "I hear you, and that sounds like a lot to carry. Would you like to talk it through?",
    "Thanks for sharing that with me. Let's take it one step at a time.",
    "That makes a lot of sense given what happened. I'm here with you.",
    "It sounds like this really matters to you. Tell me more about it.",
    "I can see why you feel that way. What would help most right now?",
    "That's wonderful to hear! I'd love to know what made it special.",
    "I understand. Even small steps count, and you've already taken one.",
    "Whatever you decide, I'll help you think it over carefully.",
};

const std::vector<std::string> kResponseZh = {
    "我听到了，这确实不容易。想和我多聊聊吗？",
    "谢谢你愿意告诉我。我们一步一步来。",
    "发生了这样的事，你有这种感受很正常。我在这里陪着你。",
    "听起来这件事对你很重要，愿意再多说一点吗？",
    "我能理解你的感受。现在做点什么会让你好受一些呢？",
    "这真是个好消息！和我说说是什么让它这么特别吧。",
    "我明白。每一小步都算数，而你已经迈出了一步。",
    "无论你怎么决定，我都会帮你一起想清楚。",
};

std::string digits_of(const std::string& s) {
    std::string out;
    for (char c : s) {
        if (c >= '0' && c <= '9') out += c;
    }
    return out;
}

uint64_t hash_request(const GenerationRequest& request) {
    uint64_t h = fnv1a64("mock-generator");
    for (const ChatMessage& m : request.messages) {
        h = fnv1a64(m.role, h);
        h = fnv1a64(m.text, h);
    }
    if (request.assistant_prefix) h = fnv1a64(*request.assistant_prefix, h);
    h = fnv1a64_mix(h, request.seed);
    return h;
}

bool request_is_zh(const GenerationRequest& request) {
    if (request.assistant_prefix && contains_cjk(*request.assistant_prefix)) return true;
    for (const ChatMessage& m : request.messages) {
        if (contains_cjk(m.text)) return true;
    }
    return false;
}

std::string last_user_text(const GenerationRequest& request) {
    for (auto it = request.messages.rbegin(); it != request.messages.rend(); ++it) {
        if (it->role == "user") return it->text;
    }
    return "";
}

}  // namespace

GenerationResult MockGeneratorClient::generate(const GenerationRequest& request) const {
    request.validate(settings_.think_tokens);
    const uint64_t h = hash_request(request);
    const bool zh = request_is_zh(request);
    const auto& causes = zh ? kCauseZh : kCauseEn;
    const auto& responses = zh ? kResponseZh : kResponseEn;
    const std::string user = last_user_text(request);

    std::string response = responses[fnv1a64_mix(h, 7) % responses.size()];
    // Echo any number found in the user turn so prompts that enumerate
    // variants ("... variant 37") yield distinct outputs.
    std::string digits = digits_of(user);
    if (!digits.empty()) response += zh ? "（要点" + digits + "）" : " (point " + digits + ")";

    const bool open_prefix =
        request.assistant_prefix &&
        request.assistant_prefix->find(settings_.think_tokens.open) != std::string::npos;

    std::string continuation;
    if (open_prefix) {
        std::string cause = causes[h % causes.size()];
        if (settings_.fail_texts.count(user)) {
            // Injected failure: think block never closes.
            continuation = " " + cause;
        } else {
            continuation = " " + cause + (zh ? "。" : ". ") + settings_.think_tokens.close + " " + response;
        }
    } else {
        continuation = response;
    }

    FinishReason finish = FinishReason::stop;
    if (codepoint_count(continuation) > static_cast<size_t>(request.sampling.max_tokens)) {
        continuation = truncate_codepoints(continuation, request.sampling.max_tokens);
        finish = FinishReason::length;
    }

    GenerationResult result = split_generation(request.assistant_prefix.value_or(""), continuation,
                                               settings_.think_tokens);
    result.finish_reason = finish;
    return result;
}

// --- mock TTS ---

WavData mock_tone(const std::string& text, const std::string& speaker_id, int rate_chars_per_s,
                  int sample_rate_hz) {
    WavData wav;
    wav.sample_rate_hz = sample_rate_hz;
    const size_t chars = codepoint_count(text);
    const double duration = std::ceil(static_cast<double>(chars) / rate_chars_per_s);
    const size_t total = static_cast<size_t>(duration * sample_rate_hz);
    wav.samples.resize(total);

    uint64_t key = fnv1a64(speaker_id, fnv1a64(text));
    const size_t segment = static_cast<size_t>(sample_rate_hz / 10);  // 100 ms
    double freq = 0.0;
    double phase = 0.0;
    for (size_t i = 0; i < total; ++i) {
        if (i % segment == 0) {
            key = key * 6364136223846793005ULL + 1442695040888963407ULL;
            freq = 180.0 + static_cast<double>(key % 620);
        }
        phase += 2.0 * M_PI * freq / sample_rate_hz;
        wav.samples[i] = static_cast<int16_t>(std::lround(8000.0 * std::sin(phase)));
    }
    return wav;
}

AudioRef MockTtsClient::synthesize(const std::string& text, const std::string& speaker_id,
                                   Language language) const {
    if (trim(text).empty()) throw EmptyTextError("cannot synthesize empty text");
    if (!settings_.tts_speakers.empty() &&
        std::find(settings_.tts_speakers.begin(), settings_.tts_speakers.end(), speaker_id) ==
            settings_.tts_speakers.end()) {
        throw UnknownSpeakerError("unknown speaker: " + speaker_id);
    }
    if (settings_.fail_texts.count(text)) throw TransportError("injected TTS failure");

    WavData wav = mock_tone(text, speaker_id, settings_.tts_rate_chars_per_s,
                            settings_.tts_sample_rate_hz);

    // The tone stands in for prosody, so the sidecar carries a deterministic
    // emotion tag the classifier can read back. Only emotive labels are
    // auto-assigned; curated corpora may also use "other"/"unknown".
    static const std::vector<std::string> kAutoLabels = {
        "angry", "disgusted", "fearful", "happy", "neutral", "sad", "surprised"};
    uint64_t key = fnv1a64("tts-emotion", fnv1a64(speaker_id, fnv1a64(text)));
    std::string emotion = kAutoLabels[key % kAutoLabels.size()];
    if (!settings_.taxonomy.contains(emotion)) emotion = "neutral";

    (void)language;
    AudioSidecar sidecar{text, emotion, speaker_id};
    return store_->put(wav, sidecar);
}

// --- mock ASR / emotion ---

std::string MockAsrClient::transcribe(const AudioRef& audio) const {
    store_->load(audio);  // throws UnreadableAudioError when missing/corrupt
    auto sidecar = store_->load_sidecar(audio);
    return sidecar ? sidecar->transcript : "";
}

EmotionAnnotation MockEmotionClient::classify_emotion(const AudioRef& audio) const {
    store_->load(audio);
    auto sidecar = store_->load_sidecar(audio);
    std::string label = "neutral";  // documented default for untagged audio
    if (sidecar && !sidecar->emotion.empty() && settings_.taxonomy.contains(sidecar->emotion)) {
        label = sidecar->emotion;
    }
    EmotionAnnotation annotation;
    annotation.label = label;
    annotation.posterior[label] = 1.0;
    annotation.source = "mock-emotion";
    return annotation;
}

// --- mock judge ---

std::vector<double> MockJudgeClient::judge(int task_id, const std::string& rubric,
                                           const std::string& dialogue, const std::string& response,
                                           uint64_t seed) const {
    if (!rubrics_.count(task_id)) {
        throw UnknownTaskError("no rubric registered for task " + std::to_string(task_id));
    }
    uint64_t h = fnv1a64(rubric, fnv1a64(dialogue, fnv1a64(response)));
    h = fnv1a64_mix(h, seed);
    h = fnv1a64_mix(h, static_cast<uint64_t>(task_id));
    std::vector<double> scores(settings_.judge_dimensions);
    for (int i = 0; i < settings_.judge_dimensions; ++i) {
        h = h * 6364136223846793005ULL + 1442695040888963407ULL;
        scores[i] = static_cast<double>((h >> 17) % 11) * 0.5;  // [0,5] in 0.5 steps
    }
    return scores;
}

// --- HTTP clients ---

namespace {

std::pair<std::string, int> split_host_port(const std::string& url) {
    std::string rest = url;
    if (starts_with(rest, "http://")) rest = rest.substr(7);
    size_t slash = rest.find('/');
    if (slash != std::string::npos) rest = rest.substr(0, slash);
    size_t colon = rest.find(':');
    if (colon == std::string::npos) return {rest, 80};
    return {rest.substr(0, colon), std::stoi(rest.substr(colon + 1))};
}

httplib::Headers auth_headers(const HttpEndpoint& endpoint) {
    httplib::Headers headers;
    if (!endpoint.api_key.empty()) {
        headers.emplace("Authorization", "Bearer " + endpoint.api_key);
    }
    return headers;
}

json post_json(const HttpEndpoint& endpoint, const std::string& path, const json& body) {
    auto [host, port] = split_host_port(endpoint.url);
    httplib::Client client(host, port);
    client.set_read_timeout(30, 0);
    auto res = client.Post(path, auth_headers(endpoint), body.dump(), "application/json");
    if (!res || res->status != 200) {
        throw TransportError("POST " + path + " failed" +
                             (res ? " with status " + std::to_string(res->status) : ""));
    }
    json parsed = json::parse(res->body, nullptr, false);
    if (parsed.is_discarded()) throw TransportError("non-JSON reply from " + path);
    return parsed;
}

std::string post_binary(const HttpEndpoint& endpoint, const std::string& path,
                        const std::string& body, const std::string& content_type) {
    auto [host, port] = split_host_port(endpoint.url);
    httplib::Client client(host, port);
    client.set_read_timeout(60, 0);
    auto res = client.Post(path, auth_headers(endpoint), body, content_type);
    if (!res || res->status != 200) {
        throw TransportError("POST " + path + " failed" +
                             (res ? " with status " + std::to_string(res->status) : ""));
    }
    return res->body;
}

json messages_to_json(const std::vector<ChatMessage>& messages) {
    json arr = json::array();
    for (const ChatMessage& m : messages) {
        arr.push_back({{"role", m.role}, {"content", m.text}});
    }
    return arr;
}

}  // namespace

HttpEndpoint endpoint_from_env(const std::string& url_var, const std::string& key_var) {
    HttpEndpoint endpoint;
    if (const char* url = std::getenv(url_var.c_str())) endpoint.url = url;
    if (const char* key = std::getenv(key_var.c_str())) endpoint.api_key = key;
    if (endpoint.url.empty()) {
        throw ConfigValidationError("environment variable " + url_var + " is not set");
    }
    return endpoint;
}

GenerationResult HttpGeneratorClient::generate(const GenerationRequest& request) const {
    request.validate(tokens_);
    json body{{"messages", messages_to_json(request.messages)},
              {"temperature", request.sampling.temperature},
              {"max_tokens", request.sampling.max_tokens},
              {"seed", request.seed}};
    if (request.assistant_prefix) body["assistant_prefix"] = *request.assistant_prefix;
    json reply = with_retries([&] { return post_json(endpoint_, "/generate", body); }, retry_);
    std::string continuation = reply.at("content").get<std::string>();
    GenerationResult result =
        split_generation(request.assistant_prefix.value_or(""), continuation, tokens_);
    result.finish_reason =
        reply.value("finish_reason", "stop") == "length" ? FinishReason::length : FinishReason::stop;
    if (result.finish_reason == FinishReason::stop && result.response.empty()) {
        throw MalformedContinuationError("empty response with finish_reason=stop");
    }
    return result;
}

AudioRef HttpTtsClient::synthesize(const std::string& text, const std::string& speaker_id,
                                   Language language) const {
    if (trim(text).empty()) throw EmptyTextError("cannot synthesize empty text");
    json body{{"text", text}, {"speaker_id", speaker_id}, {"language", to_string(language)}};
    std::string wav_bytes = with_retries(
        [&] { return post_binary(endpoint_, "/synthesize", body.dump(), "application/json"); },
        retry_);
    WavData wav = decode_wav(wav_bytes);
    return store_->put(wav, AudioSidecar{text, "", speaker_id});
}

std::string HttpAsrClient::transcribe(const AudioRef& audio) const {
    std::string wav_bytes = encode_wav(store_->load(audio));
    std::string reply_body = with_retries(
        [&] { return post_binary(endpoint_, "/transcribe", wav_bytes, "audio/wav"); }, retry_);
    json reply = json::parse(reply_body, nullptr, false);
    if (reply.is_discarded()) throw TransportError("non-JSON reply from /transcribe");
    return reply.at("text").get<std::string>();
}

EmotionAnnotation HttpEmotionClient::classify_emotion(const AudioRef& audio) const {
    std::string wav_bytes = encode_wav(store_->load(audio));
    std::string reply_body = with_retries(
        [&] { return post_binary(endpoint_, "/classify", wav_bytes, "audio/wav"); }, retry_);
    json reply = json::parse(reply_body, nullptr, false);
    if (reply.is_discarded()) throw TransportError("non-JSON reply from /classify");
    EmotionAnnotation annotation = EmotionAnnotation::from_json(reply);
    annotation.validate(taxonomy_);
    return annotation;
}

std::vector<double> HttpJudgeClient::judge(int task_id, const std::string& rubric,
                                           const std::string& dialogue, const std::string& response,
                                           uint64_t seed) const {
    if (!rubrics_.count(task_id)) {
        throw UnknownTaskError("no rubric registered for task " + std::to_string(task_id));
    }
    json body{{"task_id", task_id}, {"rubric", rubric},   {"dialogue", dialogue},
              {"response", response}, {"seed", seed},     {"dimensions", dims_}};
    json reply = with_retries([&] { return post_json(endpoint_, "/judge", body); }, retry_);
    std::vector<double> scores = reply.at("scores").get<std::vector<double>>();
    for (double& s : scores) {
        if (s < 0.0 || s > 5.0) {
            std::cerr << "[warn] judge score " << s << " out of [0,5], clamping\n";
            s = std::clamp(s, 0.0, 5.0);
        }
    }
    return scores;
}

// --- factories ---

ClientSet make_mock_clients(const MockSettings& settings, std::shared_ptr<const AudioStore> store,
                            std::map<int, std::string> judge_rubrics) {
    ClientSet set;
    set.generator = std::make_shared<MockGeneratorClient>(settings);
    set.tts = std::make_shared<MockTtsClient>(settings, store);
    set.asr = std::make_shared<MockAsrClient>(store);
    set.emotion = std::make_shared<MockEmotionClient>(settings, store);
    set.judge = std::make_shared<MockJudgeClient>(settings, std::move(judge_rubrics));
    return set;
}

ClientSet make_http_clients(const MockSettings& settings, std::shared_ptr<const AudioStore> store,
                            std::map<int, std::string> judge_rubrics, RetryPolicy retry) {
    ClientSet set;
    set.generator = std::make_shared<HttpGeneratorClient>(
        endpoint_from_env("GENERATOR_URL", "GENERATOR_API_KEY"), settings.think_tokens, retry);
    set.tts = std::make_shared<HttpTtsClient>(endpoint_from_env("TTS_URL", "TTS_API_KEY"), store,
                                              retry);
    set.asr = std::make_shared<HttpAsrClient>(endpoint_from_env("ASR_URL", "ASR_API_KEY"), store,
                                              retry);
    set.emotion = std::make_shared<HttpEmotionClient>(
        endpoint_from_env("EMOTION_URL", "EMOTION_API_KEY"), store, settings.taxonomy, retry);
    set.judge = std::make_shared<HttpJudgeClient>(endpoint_from_env("JUDGE_URL", "JUDGE_API_KEY"),
                                                  std::move(judge_rubrics),
                                                  settings.judge_dimensions, retry);
    return set;
}

}  // namespace ieatforge::clients
