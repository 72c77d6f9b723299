#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace ieatforge {

// Mono 16-bit PCM audio held in memory. All audio the toolkit writes or
// reads goes through this struct.
struct WavData {
    int sample_rate_hz = 16000;
    std::vector<int16_t> samples;

    double duration_s() const {
        return sample_rate_hz > 0 ? static_cast<double>(samples.size()) / sample_rate_hz : 0.0;
    }
};

std::string encode_wav(const WavData& wav);
WavData decode_wav(const std::string& bytes);

void write_wav(const std::filesystem::path& path, const WavData& wav);
WavData read_wav(const std::filesystem::path& path);

// Linear interpolation resampler. Only used when a concatenation pair
// disagrees on sample rate; the query side follows the instruction side.
WavData resample(const WavData& wav, int target_rate_hz);

}  // namespace ieatforge
