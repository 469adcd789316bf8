#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace fedscope {

// splitmix64 finalizer; good avalanche, used to derive independent streams.
inline uint64_t mix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Derives a child seed from a base seed and a textual label, so that every
// unit of work (client, round, sample, ...) owns its own stream regardless
// of scheduling order.
inline uint64_t derive_seed(uint64_t base, std::string_view label) {
    uint64_t h = 0xcbf29ce484222325ULL ^ mix64(base);
    for (unsigned char c : label) {
        h ^= c;
        h *= 0x100000001b3ULL;  // FNV-1a
    }
    return mix64(h);
}

inline uint64_t derive_seed(uint64_t base, std::string_view label, uint64_t index) {
    return mix64(derive_seed(base, label) ^ mix64(index + 0x51ed270b4d2853e1ULL));
}

inline std::mt19937_64 make_rng(uint64_t seed) {
    return std::mt19937_64(seed);
}

}  // namespace fedscope
