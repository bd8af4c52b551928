// Deterministic RNG helpers. std::mt19937_64 is fully specified by the
// standard; the distributions here are hand-rolled because the std::*
// distribution classes are implementation-defined and would break the
// bit-reproducibility contract across standard libraries.
#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <vector>

namespace m2spe {

inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Derives an independent stream seed from (seed, tag). Used to give each
// phase (init, epoch sampling, task construction, ...) its own stream.
inline uint64_t derive_seed(uint64_t seed, uint64_t tag) {
    return splitmix64(splitmix64(seed) ^ splitmix64(tag * 0x9e3779b97f4a7c15ULL + 1));
}

class Rng {
public:
    explicit Rng(uint64_t seed) : engine_(splitmix64(seed)) {}

    uint64_t next_u64() { return engine_(); }

    // Uniform in [0, 1), 53-bit resolution.
    double next_double() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

    // Uniform integer in [0, n). Rejection sampling keeps it unbiased.
    uint64_t uniform_int(uint64_t n) {
        if (n == 0) throw std::invalid_argument("uniform_int: empty range");
        const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        uint64_t x;
        do {
            x = engine_();
        } while (x >= limit);
        return x % n;
    }

    int index(size_t n) { return static_cast<int>(uniform_int(static_cast<uint64_t>(n))); }

    bool bernoulli(double p) { return next_double() < p; }

    // Knuth's method; fine for the small means used here.
    int poisson(double mean) {
        if (mean < 0.0 || mean > 60.0) throw std::invalid_argument("poisson: mean out of supported range");
        const double limit = std::exp(-mean);
        int k = 0;
        double p = 1.0;
        do {
            ++k;
            p *= next_double();
        } while (p > limit);
        return k - 1;
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            const size_t j = static_cast<size_t>(uniform_int(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    template <typename T>
    const T& pick(const std::vector<T>& v) {
        if (v.empty()) throw std::invalid_argument("pick: empty vector");
        return v[uniform_int(v.size())];
    }

private:
    std::mt19937_64 engine_;
};

}  // namespace m2spe
