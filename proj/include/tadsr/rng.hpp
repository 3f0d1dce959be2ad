#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>

namespace tadsr {

/// SplitMix64 finalizer: z += 0x9E3779B97F4A7C15, then two xor-shift-multiply rounds.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
    z += 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

/// Child seed for (parent, index): mix64(mix64(parent) ^ index).
constexpr std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t index) noexcept {
    return mix64(mix64(parent) ^ index);
}

/// FNV-1a over a string, used to give every named parameter its own stream.
constexpr std::uint64_t fnv1a64(std::string_view s) noexcept {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (char c : s) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001B3ULL;
    }
    return h;
}

/// Counter-based generator. Draw k of stream s under seed x is
///   mix64(mix64(mix64(x) ^ s) ^ k)
/// so every value is a pure function of (seed, stream, counter) and the
/// whole state is the counter.
///   uniform(): top 53 bits / 2^53, in [0, 1)
///   normal():  Box-Muller cosine branch over two consecutive uniforms
class CounterRng {
public:
    CounterRng(std::uint64_t seed, std::uint64_t stream) noexcept
        : key_(mix64(mix64(seed) ^ stream)) {}

    std::uint64_t next_u64() noexcept { return mix64(key_ ^ counter_++); }

    double uniform() noexcept {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

    /// Uniform integer on the closed range [lo, hi].
    int uniform_int(int lo, int hi) noexcept {
        const double span = static_cast<double>(hi) - lo + 1.0;
        int v = lo + static_cast<int>(std::floor(uniform() * span));
        return v > hi ? hi : v;
    }

    double normal() noexcept {
        const double u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(1.0 - u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    std::uint64_t counter() const noexcept { return counter_; }
    void seek(std::uint64_t counter) noexcept { counter_ = counter; }

private:
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
};

}  // namespace tadsr
