#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>

namespace ieatforge {

// Minimal SHA-256 (FIPS 180-4). Content addressing for the audio store and
// the pipeline's stage-completion digests only; no secrets involved.
class Sha256 {
public:
    Sha256();
    void update(const void* data, size_t len);
    void update(std::string_view s) { update(s.data(), s.size()); }
    std::array<uint8_t, 32> finish();

private:
    void process_block(const uint8_t* block);

    std::array<uint32_t, 8> state_;
    uint64_t total_len_ = 0;
    std::array<uint8_t, 64> buffer_{};
    size_t buffer_len_ = 0;
};

std::string sha256_hex(std::string_view data);

}  // namespace ieatforge
