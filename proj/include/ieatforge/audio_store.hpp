#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "ieatforge/jsonl.hpp"
#include "ieatforge/wav.hpp"

namespace ieatforge {

// Reference to one stored audio file. `uri` is relative to the store root
// so manifests stay position-independent.
struct AudioRef {
    std::string uri;
    double duration_s = 0.0;
    int sample_rate_hz = 0;
    int channels = 1;

    json to_json() const;
    static AudioRef from_json(const json& j);
};

// Metadata written next to each WAV (<uri>.json). The mock ASR reads the
// transcript back, the mock emotion classifier reads the emotion tag.
struct AudioSidecar {
    std::string transcript;
    std::string emotion;  // empty = untagged
    std::string speaker_id;

    json to_json() const;
    static AudioSidecar from_json(const json& j);
};

// Content-addressed WAV storage: audio/<hh>/<sha256>.wav where hh is the
// first two hex digits. Identical waveforms land on identical paths.
class AudioStore {
public:
    explicit AudioStore(std::filesystem::path root) : root_(std::move(root)) {}

    const std::filesystem::path& root() const { return root_; }

    AudioRef put(const WavData& wav, const AudioSidecar& sidecar) const;
    WavData load(const AudioRef& ref) const;
    std::optional<AudioSidecar> load_sidecar(const AudioRef& ref) const;

    std::filesystem::path resolve(const AudioRef& ref) const { return root_ / ref.uri; }

    // Throws when the WAV header disagrees with ref.duration_s by more
    // than one frame.
    void verify(const AudioRef& ref) const;

private:
    std::filesystem::path root_;
};

}  // namespace ieatforge
