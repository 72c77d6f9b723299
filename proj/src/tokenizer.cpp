#include "ieatforge/tokenizer.hpp"

#include "ieatforge/errors.hpp"
#include "ieatforge/util.hpp"

namespace ieatforge::trainkit {

std::vector<int> ByteTokenizer::encode(std::string_view text) const {
    std::vector<int> ids;
    ids.reserve(text.size());
    for (unsigned char c : text) ids.push_back(static_cast<int>(c));
    return ids;
}

std::string ByteTokenizer::decode(const std::vector<int>& ids) const {
    std::string out;
    out.reserve(ids.size());
    for (int id : ids) {
        if (id < 0 || id > 255) throw DimensionMismatchError("byte token out of range");
        out += static_cast<char>(static_cast<unsigned char>(id));
    }
    return out;
}

SpeechQuantizer::SpeechQuantizer(int speech_vocab, int frame_ms)
    : speech_vocab_(speech_vocab), frame_ms_(frame_ms) {
    if (speech_vocab < 2) throw DimensionMismatchError("speech_vocab must be >= 2");
    if (frame_ms <= 0) throw DimensionMismatchError("frame_ms must be > 0");
}

std::vector<int> SpeechQuantizer::quantize(const WavData& wav) const {
    const size_t frame = static_cast<size_t>(wav.sample_rate_hz) * frame_ms_ / 1000;
    if (frame == 0) throw DimensionMismatchError("sample rate too low for frame size");
    std::vector<int> ids;
    ids.reserve(wav.samples.size() / frame + 1);
    for (size_t start = 0; start < wav.samples.size(); start += frame) {
        size_t end = std::min(start + frame, wav.samples.size());
        uint64_t h = 0xcbf29ce484222325ULL;
        for (size_t i = start; i < end; ++i) {
            uint16_t s = static_cast<uint16_t>(wav.samples[i]);
            h ^= s & 0xff;
            h *= 0x100000001b3ULL;
            h ^= (s >> 8) & 0xff;
            h *= 0x100000001b3ULL;
        }
        ids.push_back(static_cast<int>(h % static_cast<uint64_t>(speech_vocab_)));
    }
    return ids;
}

TrainExample tokenize_example(const TokenizeInputs& in, const ByteTokenizer& text_tokenizer,
                              const SpeechQuantizer& speech_tokenizer,
                              const clients::ThinkTokens& think_tokens, int text_vocab) {
    if (text_vocab < text_tokenizer.vocab_size()) {
        throw DimensionMismatchError("text_vocab smaller than tokenizer vocab");
    }

    std::string prompt_text;
    if (!in.system_prompt.empty()) prompt_text += in.system_prompt + "\n";
    prompt_text += "user: " + in.user_text + "\nassistant: ";

    std::string assistant_text;
    if (in.reasoning.empty()) {
        assistant_text = in.response;
    } else {
        assistant_text = think_tokens.open + in.reasoning + think_tokens.close + in.response;
    }

    std::vector<int> audio_ids;
    if (in.query_audio) audio_ids = speech_tokenizer.quantize(*in.query_audio);
    std::vector<int> prompt_ids = text_tokenizer.encode(prompt_text);
    std::vector<int> assistant_ids = text_tokenizer.encode(assistant_text);
    std::vector<int> speech_out_ids;
    if (in.response_audio) speech_out_ids = speech_tokenizer.quantize(*in.response_audio);

    TrainExample ex;
    ex.stage_tag = in.stage_tag;
    const size_t a = audio_ids.size(), p = prompt_ids.size(), s = assistant_ids.size(),
                 r = speech_out_ids.size();
    const size_t total = a + p + s + r;
    ex.input_ids.reserve(total);
    for (int id : audio_ids) ex.input_ids.push_back(text_vocab + id);
    ex.input_ids.insert(ex.input_ids.end(), prompt_ids.begin(), prompt_ids.end());
    ex.input_ids.insert(ex.input_ids.end(), assistant_ids.begin(), assistant_ids.end());
    for (int id : speech_out_ids) ex.input_ids.push_back(text_vocab + id);

    ex.text_targets.assign(total, -1);
    ex.speech_targets.assign(total, -1);
    // position t predicts input position t+1
    for (size_t next = a + p; next < a + p + s; ++next) {
        ex.text_targets[next - 1] = assistant_ids[next - (a + p)];
    }
    for (size_t next = a + p + s; next < total; ++next) {
        ex.speech_targets[next - 1] = speech_out_ids[next - (a + p + s)];
    }
    return ex;
}

TrainExample truncate_example(TrainExample example, size_t max_seq) {
    if (example.input_ids.size() <= max_seq) return example;
    example.input_ids.resize(max_seq);
    example.text_targets.resize(max_seq);
    example.speech_targets.resize(max_seq);
    // the final position now predicts past the cut
    if (max_seq > 0) {
        example.text_targets[max_seq - 1] = -1;
        example.speech_targets[max_seq - 1] = -1;
    }
    return example;
}

}  // namespace ieatforge::trainkit
