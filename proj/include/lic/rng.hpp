#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace lic {

// Deterministic PRNG used everywhere random numbers are needed so runs are
// reproducible bit-for-bit.
//
// Generator: xoshiro256++ (Blackman & Vigna). Seeding scheme: the 256-bit
// state is filled by four successive outputs of splitmix64 started at the
// user seed. Derived streams (per dataset item, per grid cell) are obtained
// with mix(), which is splitmix64 of the two inputs combined; this keeps
// every stream a pure function of the documented seed.
class Rng {
public:
    explicit Rng(uint64_t seed) {
        uint64_t x = seed;
        for (auto& w : state_) w = splitmix64(x);
    }

    uint64_t next_u64() {
        const uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
        const uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    // Uniform in [0, 1), 53 bits of resolution.
    double next_double() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) {
        return lo + (hi - lo) * next_double();
    }

    // Uniform integer in [0, n). Multiply-shift reduction; the residual bias
    // is below 2^-64 and irrelevant next to determinism, which is the point.
    uint64_t next_below(uint64_t n) {
        return static_cast<uint64_t>(
            (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
    }

    // Standard normal via Box-Muller. No caching of the second value, so the
    // stream position is a fixed two draws per call.
    double normal() {
        const double u1 = (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
        const double u2 = next_double();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    // Derive a child seed from a parent seed and a stream tag.
    static uint64_t mix(uint64_t seed, uint64_t tag) {
        uint64_t x = seed ^ (0x9e3779b97f4a7c15ULL * (tag + 1));
        return splitmix64(x);
    }

private:
    static uint64_t splitmix64(uint64_t& x) {
        x += 0x9e3779b97f4a7c15ULL;
        uint64_t z = x;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    static uint64_t rotl(uint64_t v, int k) {
        return (v << k) | (v >> (64 - k));
    }

    uint64_t state_[4];
};

// Fisher-Yates shuffle driven by the documented generator.
template <typename T>
inline void fisher_yates_shuffle(std::vector<T>& items, Rng& rng) {
    for (size_t i = items.size(); i > 1; --i) {
        const size_t j = static_cast<size_t>(rng.next_below(i));
        std::swap(items[i - 1], items[j]);
    }
}

}  // namespace lic
