#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "ieatforge/clients.hpp"
#include "ieatforge/wav.hpp"

namespace ieatforge::trainkit {

// Tokenized supervision for the toy model. input_ids live in a unified id
// space: [0, text_vocab) are text tokens, [text_vocab, text_vocab +
// speech_vocab) are speech tokens. Targets hold raw (un-offset) ids with -1
// marking ignored positions; text_targets[t] / speech_targets[t] name the
// token at position t+1, i.e. targets are pre-shifted next-token labels.
struct TrainExample {
    std::vector<int> input_ids;
    std::vector<int> text_targets;
    std::vector<int> speech_targets;
    std::string stage_tag = "stage1_1";
};

// Byte-level fallback tokenizer: one token per byte, vocab 256. Guarantees
// coverage of any UTF-8 content; think delimiters are ordinary tokens.
class ByteTokenizer {
public:
    int vocab_size() const { return 256; }
    std::vector<int> encode(std::string_view text) const;
    std::string decode(const std::vector<int>& ids) const;
};

// Stub speech codec: hashes each 20 ms waveform frame into one of
// speech_vocab bins. Deterministic in the waveform bytes.
class SpeechQuantizer {
public:
    SpeechQuantizer(int speech_vocab, int frame_ms = 20);
    std::vector<int> quantize(const WavData& wav) const;
    int vocab_size() const { return speech_vocab_; }
    int frame_ms() const { return frame_ms_; }

private:
    int speech_vocab_;
    int frame_ms_;
};

struct TokenizeInputs {
    std::string system_prompt;
    std::string user_text;
    std::string reasoning;  // empty for stage 1-1 targets
    std::string response;
    const WavData* query_audio = nullptr;     // becomes the speech-adapter prefix
    const WavData* response_audio = nullptr;  // becomes the speech-output tail (stage 2)
    std::string stage_tag = "stage1_1";
};

// Layout: [query speech tokens][prompt text][assistant text][response speech
// tokens]. Masks supervise assistant text and response speech only.
TrainExample tokenize_example(const TokenizeInputs& in, const ByteTokenizer& text_tokenizer,
                              const SpeechQuantizer& speech_tokenizer,
                              const clients::ThinkTokens& think_tokens, int text_vocab);

// Drops tail positions so the example fits max_seq.
TrainExample truncate_example(TrainExample example, size_t max_seq);

}  // namespace ieatforge::trainkit
