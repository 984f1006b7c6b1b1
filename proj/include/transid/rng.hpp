#pragma once

#include <cstdint>

namespace transid {

/**
 * Counter-based 64-bit generator (SplitMix64).
 *
 * The n-th output (n = 0, 1, ...) of a generator keyed with `seed` is
 *
 *     mix64(seed + (n + 1) * 0x9E3779B97F4A7C15)      (mod 2^64)
 *
 * where mix64(z) is the SplitMix64 finalizer:
 *
 *     z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
 *     z = (z ^ (z >> 27)) * 0x94D049BB133111EB
 *     z =  z ^ (z >> 31)
 *
 * uniform() maps an output to [0, 1) as (u >> 11) * 2^-53.
 * gaussian() consumes exactly two outputs u1, u2 and returns
 * sqrt(-2 ln(1 - uniform(u1))) * cos(2 pi uniform(u2)) (Box-Muller, cosine
 * branch only, no caching), so streams are reproducible in any language.
 */
class Rng {
public:
    explicit Rng(std::uint64_t seed) noexcept : key_(seed) {}

    std::uint64_t next_u64() noexcept;
    double uniform() noexcept;
    double gaussian() noexcept;
    /// Uniform integer in [0, bound) by rejection; bound > 0.
    std::uint64_t below(std::uint64_t bound) noexcept;

    std::uint64_t counter() const noexcept { return counter_; }

private:
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
};

std::uint64_t mix64(std::uint64_t z) noexcept;

/// Named sub-streams used for seed fan-out.
enum class Stream : std::uint64_t {
    Object = 1,
    Layer = 2,
    Capture = 3,
    Noise = 4,
    Split = 5,
    Shuffle = 6,
    Init = 7,
    Augment = 8,
};

/**
 * Child seed for (parent, stream, index):
 *     mix64(mix64(parent ^ (stream * 0xD1B54A32D192ED03)) + index * 0x9E3779B97F4A7C15)
 */
std::uint64_t derive_seed(std::uint64_t parent, Stream stream, std::uint64_t index = 0) noexcept;

} // namespace transid
