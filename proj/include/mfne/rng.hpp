#pragma once

// Counter-based random numbers: every draw is a pure function of its key, so
// the sampled noise never depends on evaluation order or thread count.

#include <cmath>
#include <cstdint>
#include <numbers>

namespace mfne::rng {

constexpr std::uint64_t splitmix64(std::uint64_t z) noexcept {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// Hash of an ordered key tuple.
constexpr std::uint64_t key(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0,
                            std::uint64_t c = 0) noexcept {
    std::uint64_t h = splitmix64(seed ^ 0x5851f42d4c957f2dULL);
    h = splitmix64(h ^ a);
    h = splitmix64(h ^ (b + 0x632be59bd9b4e019ULL));
    h = splitmix64(h ^ (c + 0x2545f4914f6cdd1dULL));
    return h;
}

/// Uniform in (0, 1].
constexpr double to_unit(std::uint64_t bits) noexcept {
    return static_cast<double>((bits >> 11) + 1) * 0x1.0p-53;
}

inline double uniform(std::uint64_t k, std::uint64_t lane = 0) noexcept {
    return to_unit(splitmix64(k ^ splitmix64(lane)));
}

/// Standard normal via Box-Muller on two independent lanes of the key.
inline double normal(std::uint64_t k, std::uint64_t index) noexcept {
    const double u1 = uniform(k, 2 * index);
    const double u2 = uniform(k, 2 * index + 1);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

// Stream tags keep the draws for different purposes disjoint.
enum class Stream : std::uint64_t {
    init_x = 1,
    init_y = 2,
    step_noise = 3,
    projection = 4,
    dictionary = 5,
    gradcheck = 6,
    replica = 7,
    perturbation = 8,
};

constexpr std::uint64_t stream_key(std::uint64_t seed, Stream s, std::uint64_t a,
                                   std::uint64_t b = 0) noexcept {
    return key(seed, static_cast<std::uint64_t>(s), a, b);
}

} // namespace mfne::rng
