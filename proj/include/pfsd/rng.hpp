#pragma once

#include <cstdint>
#include <random>

namespace pfsd {

inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Derives an independent child seed from a base seed and a stream tag.
inline uint64_t derive_seed(uint64_t base, uint64_t stream) {
    return splitmix64(splitmix64(base) ^ splitmix64(stream + 0x51'7c'c1'b7'27'22'0a'95ULL));
}

// Deterministic RNG. mt19937_64 is fully specified by the standard and the
// sampling helpers below avoid std::uniform_*_distribution, whose output is
// implementation defined, so streams are reproducible across compilers.
class Rng {
public:
    explicit Rng(uint64_t seed) : engine_(splitmix64(seed)), seed_(seed) {}

    uint64_t next_u64() { return engine_(); }

    // [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // [0, n). Modulo bias is irrelevant at the n used here.
    uint64_t below(uint64_t n) { return engine_() % n; }

    // Inclusive [lo, hi].
    int uniform_int(int lo, int hi) {
        return lo + static_cast<int>(below(static_cast<uint64_t>(hi - lo + 1)));
    }

    bool bernoulli(double p) { return uniform() < p; }

    Rng fork(uint64_t stream) const { return Rng(derive_seed(seed_, stream)); }

private:
    std::mt19937_64 engine_;
    uint64_t seed_;
};

}  // namespace pfsd
