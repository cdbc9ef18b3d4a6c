#pragma once

#include <cstdint>

namespace ustab {

// One SplitMix64 output for the given state (increment, then the finalizer).
constexpr uint64_t splitmix64(uint64_t state) {
    uint64_t z = state + 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

// Child seed for task `ordinal` under `master`. Cell and repeat streams in the
// sweep and heatmap drivers are all derived through this function.
constexpr uint64_t derive_seed(uint64_t master, uint64_t ordinal) {
    return splitmix64(master ^ (ordinal * 0x9E3779B97F4A7C15ULL));
}

} // namespace ustab
