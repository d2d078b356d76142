#pragma once

#include <cstdint>
#include <random>

namespace sdjr {

using Engine = std::mt19937_64;

/// Independent sub-streams of one path. Each source of randomness gets its own
/// engine so that, e.g., changing the jump rate leaves the Brownian draws alone.
enum class Stream : std::uint32_t {
    chain = 1,
    jumps = 2,
    brownian = 3,
    initial_state = 4,
    auxiliary = 5,
};

/// Counter-based stream: path `path` of a run with seed `seed` always sees the
/// same draws, independent of which worker generates it or in what order.
inline Engine make_engine(std::uint64_t seed, std::uint64_t path, Stream stream) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(path), static_cast<std::uint32_t>(path >> 32),
                      static_cast<std::uint32_t>(stream), 0x5d1e7a9bu};
    return Engine(seq);
}

} // namespace sdjr
