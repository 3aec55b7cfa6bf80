#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace fedpoison {

using Rng = std::mt19937_64;

/// One round of the splitmix64 output mix. Used as the hash step when
/// fanning a master seed out into independent per-purpose streams.
constexpr std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

/// Tags that keep seed streams for unrelated purposes disjoint even when
/// their numeric parts collide.
enum class SeedStream : std::uint64_t {
    kInit = 1,
    kClient = 2,
    kAttack = 3,
    kImportance = 4,
    kLearningRate = 5,
    kSynthetic = 6,
    kSplit = 7,
    kPartition = 8,
    kExperiment = 9,
    kTree = 10,
    kPermute = 11,
};

/// Derives a child seed from `base` by hashing in the stream tag and any
/// extra parts (client index, round number, ...). The chain is stable
/// across platforms, so every consumer of the same (base, stream, parts)
/// tuple sees the same stream.
inline std::uint64_t derive_seed(std::uint64_t base, SeedStream stream,
                                 std::initializer_list<std::uint64_t> parts = {}) {
    std::uint64_t h = splitmix64(base);
    h = splitmix64(h ^ static_cast<std::uint64_t>(stream));
    for (std::uint64_t part : parts) {
        h = splitmix64(h ^ part);
    }
    return h;
}

}  // namespace fedpoison
