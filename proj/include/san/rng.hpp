#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace san {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Counter-based stream key: hashes a seed together with any number of
/// counters (sample index, epoch, purpose tag...). Streams with different
/// keys are treated as independent.
inline std::uint64_t stream_key(std::uint64_t seed, std::initializer_list<std::uint64_t> counters) noexcept {
    std::uint64_t h = splitmix64(seed);
    for (std::uint64_t c : counters) h = splitmix64(h ^ splitmix64(c + 0x632be59bd9b4e019ULL));
    return h;
}

inline Rng make_stream(std::uint64_t seed, std::initializer_list<std::uint64_t> counters) {
    return Rng(stream_key(seed, counters));
}

/// Stream purpose tags, so e.g. augmentation and label noise never share draws.
enum StreamTag : std::uint64_t {
    kTagInit = 1,
    kTagLift = 2,
    kTagSample = 3,
    kTagAugment = 4,
    kTagViewNoise = 5,
    kTagLabelNoise = 6,
    kTagShuffle = 7,
    kTagGradCheck = 8,
};

}  // namespace san
