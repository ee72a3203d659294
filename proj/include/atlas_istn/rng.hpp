#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

namespace atlas_istn {

// All randomness in the pipeline derives from one root seed. Components ask
// for a child seed by name (and optionally an index) so that adding a new
// consumer never perturbs the streams of existing ones.

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t hash_name(std::string_view name) {
    std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
    for (unsigned char c : name) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::uint64_t child_seed(std::uint64_t parent, std::string_view name, std::uint64_t index = 0) {
    return splitmix64(splitmix64(parent ^ hash_name(name)) + index);
}

using Rng = std::mt19937_64;

inline double uniform(Rng& rng, double lo, double hi) {
    // 53-bit mantissa from one draw; avoids implementation-defined
    // std::uniform_real_distribution so streams are portable.
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    return lo + (hi - lo) * u;
}

inline double standard_normal(Rng& rng) {
    // Box-Muller, one value per call.
    constexpr double two_pi = 6.283185307179586476925286766559;
    double u1 = uniform(rng, 0.0, 1.0);
    while (u1 <= 0.0) u1 = uniform(rng, 0.0, 1.0);
    const double u2 = uniform(rng, 0.0, 1.0);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(two_pi * u2);
}

template <typename It>
void shuffle(It first, It last, Rng& rng) {
    // Fisher-Yates with a portable index draw (std::shuffle is unspecified).
    const auto n = static_cast<std::uint64_t>(last - first);
    for (std::uint64_t i = n; i > 1; --i) {
        const std::uint64_t j = rng() % i;
        std::swap(first[i - 1], first[j]);
    }
}

}  // namespace atlas_istn
