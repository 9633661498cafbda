#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace tve {

inline uint64_t splitmix64(uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

// Deterministic RNG with explicit distributions. std::mt19937_64 has a fixed
// portable bit stream; the transforms below avoid the implementation-defined
// distributions in <random>, so one seed gives one value sequence anywhere.
class Rng {
public:
    explicit Rng(uint64_t seed) : seed_(seed), engine_(splitmix64(seed)) {}

    uint64_t seed() const { return seed_; }

    uint64_t next_u64() { return engine_(); }

    // Uniform in [0, 1), 53-bit resolution.
    double uniform() { return double(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n). Modulo bias is irrelevant for n << 2^64.
    uint64_t uniform_int(uint64_t n) { return engine_() % n; }

    bool bernoulli(double p) { return uniform() < p; }

    // Standard normal via Box-Muller; spare value cached.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 1e-300) u1 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 6.28318530717958647692 * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    // Fisher-Yates shuffle of [0, n) index vector.
    template <typename Int>
    void shuffle(std::vector<Int>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            const size_t j = size_t(uniform_int(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    // Independent child stream, a pure function of the parent seed (not of
    // how much the parent has consumed). Per-image streams derive from the
    // master seed + image index so parallel order cannot change results.
    Rng derive(uint64_t stream) const {
        return Rng(splitmix64(splitmix64(seed_) ^ splitmix64(stream + 1)));
    }

private:
    uint64_t seed_;
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

} // namespace tve
