#pragma once

#include <cstdint>
#include <random>

namespace baddet {

/// Independent stream for (seed, stream, index). Lets per-image work run in
/// any order or on any worker and still produce identical results.
inline std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t stream, std::uint64_t index = 0) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(index),
                      static_cast<std::uint32_t>(index >> 32)};
    return std::mt19937_64(seq);
}

inline int uniform_int(std::mt19937_64& rng, int lo, int hi) {
    return std::uniform_int_distribution<int>(lo, hi)(rng);
}

namespace streams {
inline constexpr std::uint64_t synthetic = 0x5e;
inline constexpr std::uint64_t select = 0x5e1;
inline constexpr std::uint64_t train_poison = 0x7a;
inline constexpr std::uint64_t test_poison = 0x7e;
inline constexpr std::uint64_t feature_bank = 0xfb;
}  // namespace streams

}  // namespace baddet
