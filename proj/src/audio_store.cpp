#include "ieatforge/audio_store.hpp"

#include <cmath>

#include "ieatforge/errors.hpp"
#include "ieatforge/sha256.hpp"
#include "ieatforge/util.hpp"

namespace ieatforge {

json AudioRef::to_json() const {
    return json{{"uri", uri},
                {"duration_s", duration_s},
                {"sample_rate_hz", sample_rate_hz},
                {"channels", channels}};
}

AudioRef AudioRef::from_json(const json& j) {
    AudioRef ref;
    ref.uri = j.at("uri").get<std::string>();
    ref.duration_s = j.at("duration_s").get<double>();
    ref.sample_rate_hz = j.at("sample_rate_hz").get<int>();
    ref.channels = j.value("channels", 1);
    return ref;
}

json AudioSidecar::to_json() const {
    json j{{"transcript", transcript}, {"speaker_id", speaker_id}};
    if (!emotion.empty()) j["emotion"] = emotion;
    return j;
}

AudioSidecar AudioSidecar::from_json(const json& j) {
    AudioSidecar s;
    s.transcript = j.value("transcript", "");
    s.emotion = j.value("emotion", "");
    s.speaker_id = j.value("speaker_id", "");
    return s;
}

AudioRef AudioStore::put(const WavData& wav, const AudioSidecar& sidecar) const {
    std::string bytes = encode_wav(wav);
    std::string digest = sha256_hex(bytes);
    std::string uri = "audio/" + digest.substr(0, 2) + "/" + digest + ".wav";
    std::filesystem::path path = root_ / uri;
    if (!std::filesystem::exists(path)) {
        write_file(path, bytes);
        write_file(path.string() + ".json", sidecar.to_json().dump());
    }
    AudioRef ref;
    ref.uri = uri;
    ref.duration_s = wav.duration_s();
    ref.sample_rate_hz = wav.sample_rate_hz;
    ref.channels = 1;
    return ref;
}

WavData AudioStore::load(const AudioRef& ref) const { return read_wav(resolve(ref)); }

std::optional<AudioSidecar> AudioStore::load_sidecar(const AudioRef& ref) const {
    std::filesystem::path path = resolve(ref);
    path += ".json";
    if (!std::filesystem::exists(path)) return std::nullopt;
    json j = json::parse(read_file(path), nullptr, false);
    if (j.is_discarded()) return std::nullopt;
    return AudioSidecar::from_json(j);
}

void AudioStore::verify(const AudioRef& ref) const {
    WavData wav = load(ref);
    if (wav.sample_rate_hz != ref.sample_rate_hz) {
        throw UnreadableAudioError("sample rate mismatch for " + ref.uri);
    }
    double frame = 1.0 / ref.sample_rate_hz;
    if (std::abs(wav.duration_s() - ref.duration_s) > frame) {
        throw UnreadableAudioError("duration mismatch for " + ref.uri);
    }
}

}  // namespace ieatforge
