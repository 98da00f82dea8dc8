#pragma once

#include <cmath>
#include <cstdint>
#include <string>

namespace forge {

// Counter-based RNG. Every stochastic site hashes (seed, stream, counter)
// independently, so results do not depend on evaluation order or thread
// partitioning, and streams can be split freely by deriving new stream ids.

constexpr std::uint64_t mix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

constexpr std::uint64_t rng_hash(std::uint64_t seed, std::uint64_t stream, std::uint64_t counter) {
    return mix64(mix64(mix64(seed) ^ stream) ^ counter);
}

// Uniform in [0, 1) with 53 random bits.
inline double to_unit(std::uint64_t h) {
    return static_cast<double>(h >> 11) * 0x1.0p-53;
}

inline double uniform_at(std::uint64_t seed, std::uint64_t stream, std::uint64_t counter) {
    return to_unit(rng_hash(seed, stream, counter));
}

// FNV-1a, used to derive per-parameter init streams from name paths.
constexpr std::uint64_t fnv1a(const char* s, std::size_t n) {
    std::uint64_t h = 0xCBF29CE484222325ull;
    for (std::size_t i = 0; i < n; ++i) {
        h ^= static_cast<unsigned char>(s[i]);
        h *= 0x100000001B3ull;
    }
    return h;
}

inline std::uint64_t fnv1a(const std::string& s) { return fnv1a(s.data(), s.size()); }

// Sequential drawing convenience over the counter scheme.
struct CounterRng {
    std::uint64_t seed = 0;
    std::uint64_t stream = 0;
    std::uint64_t counter = 0;

    CounterRng(std::uint64_t seed_, std::uint64_t stream_ = 0) : seed(seed_), stream(stream_) {}

    std::uint64_t next_u64() { return rng_hash(seed, stream, counter++); }
    double uniform() { return to_unit(next_u64()); }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    // Box-Muller; draws two units per call.
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        if (u1 <= 0.0) u1 = 0x1.0p-53;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }
    // Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n) { return n ? next_u64() % n : 0; }
};

// Seeded in-place Fisher-Yates.
template <typename Vec>
void shuffle(Vec& v, CounterRng& rng) {
    for (std::size_t i = v.size(); i > 1; --i) {
        std::size_t j = static_cast<std::size_t>(rng.below(i));
        std::swap(v[i - 1], v[j]);
    }
}

} // namespace forge
