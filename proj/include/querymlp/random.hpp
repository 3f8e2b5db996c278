#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

namespace querymlp {

/// Mixes a list of integers into one 64-bit seed. Used to give every
/// (seed, epoch, batch) or (seed, sample) tuple an independent stream.
inline std::uint64_t derive_seed(std::initializer_list<std::uint64_t> parts) {
    std::vector<std::uint32_t> words;
    words.reserve(parts.size() * 2);
    for (std::uint64_t p : parts) {
        words.push_back(static_cast<std::uint32_t>(p & 0xffffffffu));
        words.push_back(static_cast<std::uint32_t>(p >> 32));
    }
    std::seed_seq seq(words.begin(), words.end());
    std::uint32_t out[2];
    seq.generate(out, out + 2);
    return (static_cast<std::uint64_t>(out[1]) << 32) | out[0];
}

using Rng = std::mt19937_64;

} // namespace querymlp
