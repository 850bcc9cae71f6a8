#pragma once

#include <cstdint>
#include <span>
#include <string>

namespace compartos {

// FNV-1a, 64-bit: cheap, deterministic content fingerprints for scenario
// assertions and reports. Not cryptographic.
inline uint64_t fnv1a64(std::span<const uint8_t> data)
{
    uint64_t h = 0xcbf29ce484222325ull;
    for (uint8_t b : data) {
        h ^= b;
        h *= 0x100000001b3ull;
    }
    return h;
}

std::string digest_hex(uint64_t h);

}  // namespace compartos
