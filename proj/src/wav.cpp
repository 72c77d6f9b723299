#include "ieatforge/wav.hpp"

#include <cmath>
#include <cstring>

#include "ieatforge/errors.hpp"
#include "ieatforge/util.hpp"

namespace ieatforge {

namespace {

void put_u32(std::string& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out += static_cast<char>((v >> (8 * i)) & 0xff);
}

void put_u16(std::string& out, uint16_t v) {
    out += static_cast<char>(v & 0xff);
    out += static_cast<char>((v >> 8) & 0xff);
}

uint32_t get_u32(const std::string& s, size_t off) {
    return static_cast<uint8_t>(s[off]) | static_cast<uint32_t>(static_cast<uint8_t>(s[off + 1])) << 8 |
           static_cast<uint32_t>(static_cast<uint8_t>(s[off + 2])) << 16 |
           static_cast<uint32_t>(static_cast<uint8_t>(s[off + 3])) << 24;
}

uint16_t get_u16(const std::string& s, size_t off) {
    return static_cast<uint16_t>(static_cast<uint8_t>(s[off]) |
                                 static_cast<uint16_t>(static_cast<uint8_t>(s[off + 1])) << 8);
}

}  // namespace

std::string encode_wav(const WavData& wav) {
    const uint32_t data_size = static_cast<uint32_t>(wav.samples.size() * 2);
    std::string out;
    out.reserve(44 + data_size);
    out += "RIFF";
    put_u32(out, 36 + data_size);
    out += "WAVEfmt ";
    put_u32(out, 16);
    put_u16(out, 1);  // PCM
    put_u16(out, 1);  // mono
    put_u32(out, static_cast<uint32_t>(wav.sample_rate_hz));
    put_u32(out, static_cast<uint32_t>(wav.sample_rate_hz * 2));
    put_u16(out, 2);   // block align
    put_u16(out, 16);  // bits per sample
    out += "data";
    put_u32(out, data_size);
    for (int16_t s : wav.samples) {
        out += static_cast<char>(s & 0xff);
        out += static_cast<char>((s >> 8) & 0xff);
    }
    return out;
}

WavData decode_wav(const std::string& bytes) {
    if (bytes.size() < 44 || bytes.compare(0, 4, "RIFF") != 0 || bytes.compare(8, 4, "WAVE") != 0) {
        throw UnreadableAudioError("not a RIFF/WAVE file");
    }
    WavData wav;
    size_t pos = 12;
    bool have_fmt = false, have_data = false;
    uint16_t channels = 1;
    while (pos + 8 <= bytes.size()) {
        std::string chunk_id = bytes.substr(pos, 4);
        uint32_t chunk_size = get_u32(bytes, pos + 4);
        size_t body = pos + 8;
        if (body + chunk_size > bytes.size()) throw UnreadableAudioError("truncated WAV chunk");
        if (chunk_id == "fmt ") {
            if (chunk_size < 16) throw UnreadableAudioError("short fmt chunk");
            uint16_t format = get_u16(bytes, body);
            channels = get_u16(bytes, body + 2);
            wav.sample_rate_hz = static_cast<int>(get_u32(bytes, body + 4));
            uint16_t bits = get_u16(bytes, body + 14);
            if (format != 1 || bits != 16) throw UnreadableAudioError("only 16-bit PCM supported");
            have_fmt = true;
        } else if (chunk_id == "data") {
            if (channels != 1) throw UnreadableAudioError("only mono supported");
            size_t n = chunk_size / 2;
            wav.samples.resize(n);
            for (size_t i = 0; i < n; ++i) {
                wav.samples[i] = static_cast<int16_t>(
                    static_cast<uint16_t>(static_cast<uint8_t>(bytes[body + 2 * i])) |
                    static_cast<uint16_t>(static_cast<uint8_t>(bytes[body + 2 * i + 1])) << 8);
            }
            have_data = true;
        }
        pos = body + chunk_size + (chunk_size & 1);
    }
    if (!have_fmt || !have_data) throw UnreadableAudioError("missing fmt or data chunk");
    return wav;
}

void write_wav(const std::filesystem::path& path, const WavData& wav) {
    write_file(path, encode_wav(wav));
}

WavData read_wav(const std::filesystem::path& path) {
    std::error_code ec;
    if (!std::filesystem::exists(path, ec)) {
        throw UnreadableAudioError("audio file not found: " + path.string());
    }
    return decode_wav(read_file(path));
}

WavData resample(const WavData& wav, int target_rate_hz) {
    if (target_rate_hz == wav.sample_rate_hz || wav.samples.empty()) {
        WavData out = wav;
        out.sample_rate_hz = target_rate_hz;
        return out;
    }
    WavData out;
    out.sample_rate_hz = target_rate_hz;
    const double ratio = static_cast<double>(wav.sample_rate_hz) / target_rate_hz;
    const size_t n = static_cast<size_t>(std::llround(wav.samples.size() / ratio));
    out.samples.resize(n);
    for (size_t i = 0; i < n; ++i) {
        double src = i * ratio;
        size_t i0 = static_cast<size_t>(src);
        size_t i1 = std::min(i0 + 1, wav.samples.size() - 1);
        double frac = src - i0;
        double v = (1.0 - frac) * wav.samples[std::min(i0, wav.samples.size() - 1)] + frac * wav.samples[i1];
        out.samples[i] = static_cast<int16_t>(std::lround(v));
    }
    return out;
}

}  // namespace ieatforge
