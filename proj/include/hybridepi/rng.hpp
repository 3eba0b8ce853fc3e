#pragma once

#include <cstdint>
#include <random>

namespace hybridepi {

using Rng = std::mt19937_64;

/// One round of SplitMix64. Stable: derived seeds must not change between versions.
constexpr std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Seed for run `run` of grid point `point` under `master`.
constexpr std::uint64_t derive_seed(std::uint64_t master, std::uint64_t point, std::uint64_t run) {
    return splitmix64(splitmix64(splitmix64(master) ^ point) ^ run);
}

} // namespace hybridepi
