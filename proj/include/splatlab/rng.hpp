#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace splatlab {

// Deterministic, platform-independent generator (splitmix64 core). Used for
// everything that must reproduce bit-exactly across runs: initialization,
// view sampling, stratified jitter, synthetic data.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    // Derives an independent stream, e.g. Rng(seed).fork("views").
    Rng fork(std::string_view label) const {
        uint64_t h = 0xcbf29ce484222325ull; // FNV-1a
        for (char c : label) {
            h ^= static_cast<uint8_t>(c);
            h *= 0x100000001b3ull;
        }
        return Rng(state_ ^ h ^ 0x9e3779b97f4a7c15ull);
    }

    uint64_t next_u64() {
        state_ += 0x9e3779b97f4a7c15ull;
        uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    // uniform in [0, 1)
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // uniform integer in [0, n)
    uint64_t uniform_index(uint64_t n) { return next_u64() % n; }

    // standard normal via Box-Muller
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        while (u1 <= 1e-300) u1 = uniform();
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double theta = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(theta);
        have_spare_ = true;
        return r * std::cos(theta);
    }

private:
    uint64_t state_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

} // namespace splatlab
