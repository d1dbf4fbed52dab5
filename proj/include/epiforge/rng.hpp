#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "epiforge/errors.hpp"

namespace epiforge {

// Portable, seedable randomness. Everything here is fixed-algorithm so the
// same (seed, call sequence) yields the same draws on every platform; the
// standard library distributions are deliberately not used because their
// outputs are implementation defined.
//
// Stream discipline: every consumer derives its own stream with substream()
// and a named tag below, so network generation, parameter sampling,
// simulation and training never share a generator.

namespace streams {
constexpr std::uint64_t network   = 0x6E65;
constexpr std::uint64_t simulate  = 0x7369;
constexpr std::uint64_t sample    = 0x7361;
constexpr std::uint64_t curve     = 0x6376;
constexpr std::uint64_t calibrate = 0x636C;
constexpr std::uint64_t train     = 0x7472;
constexpr std::uint64_t dropout   = 0x6472;
} // namespace streams

// splitmix64 finalizer (Stafford mix13).
inline std::uint64_t mix64(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

// Derive an independent child seed from (seed, tag). Two rounds of mixing so
// related tags (0,1,2,...) land far apart.
inline std::uint64_t substream(std::uint64_t seed, std::uint64_t tag) {
    return mix64(mix64(seed + 0x9E3779B97F4A7C15ull) ^ (tag + 0xD1B54A32D192ED03ull));
}

inline std::uint64_t substream(std::uint64_t seed, std::uint64_t tag_a, std::uint64_t tag_b) {
    return substream(substream(seed, tag_a), tag_b);
}

// xoshiro256++ seeded through splitmix64 per the reference recommendation.
class Rng {
public:
    using result_type = std::uint64_t;

    explicit Rng(std::uint64_t seed = 0) {
        std::uint64_t sm = seed;
        for (auto& word : state_) {
            sm += 0x9E3779B97F4A7C15ull;
            word = mix64(sm);
        }
    }

    static constexpr result_type min() { return 0; }
    static constexpr result_type max() { return ~result_type{0}; }

    result_type operator()() {
        const std::uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
        const std::uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    // Uniform double in [0, 1), 53 significant bits.
    double uniform01() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    // Uniform integer in [0, n); Lemire multiply-shift with rejection.
    std::uint64_t below(std::uint64_t n) {
        if (n == 0) throw NumericError("Rng::below: n must be positive");
        unsigned __int128 m = static_cast<unsigned __int128>((*this)()) * n;
        auto low = static_cast<std::uint64_t>(m);
        if (low < n) {
            const std::uint64_t threshold = (0 - n) % n;
            while (low < threshold) {
                m = static_cast<unsigned __int128>((*this)()) * n;
                low = static_cast<std::uint64_t>(m);
            }
        }
        return static_cast<std::uint64_t>(m >> 64);
    }

    bool bernoulli(double p) { return uniform01() < p; }

    // Box-Muller without caching; consumes two uniforms per draw.
    double normal(double mean = 0.0, double sd = 1.0) {
        double u1 = uniform01();
        while (u1 <= 0.0) u1 = uniform01();
        const double u2 = uniform01();
        const double r = std::sqrt(-2.0 * std::log(u1));
        constexpr double two_pi = 6.283185307179586476925286766559;
        return mean + sd * r * std::cos(two_pi * u2);
    }

    // Index draw by CDF inversion; probabilities need not be normalized.
    std::size_t discrete(const std::vector<double>& weights) {
        if (weights.empty()) throw NumericError("Rng::discrete: empty weight vector");
        double total = 0.0;
        for (double w : weights) total += w;
        const double u = uniform01() * total;
        double acc = 0.0;
        for (std::size_t i = 0; i < weights.size(); ++i) {
            acc += weights[i];
            if (u < acc) return i;
        }
        return weights.size() - 1;
    }

private:
    static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

    std::uint64_t state_[4];
};

} // namespace epiforge
