#pragma once

#include <cstdint>
#include <random>

namespace geop2p {

// Deterministic random source. mt19937_64 is fully specified by the
// standard and the mappings below avoid std::uniform_*_distribution,
// whose output is implementation-defined; the same seed therefore yields
// the same stream on any toolchain.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : eng_(seed) {}

    std::uint64_t next() { return eng_(); }

    // [0, n); modulo bias is irrelevant here, reproducibility is not.
    std::uint64_t below(std::uint64_t n) { return n ? eng_() % n : 0; }

    // [lo, hi)
    double uniform(double lo, double hi) {
        const double u = (eng_() >> 11) * 0x1.0p-53; // [0, 1)
        return lo + u * (hi - lo);
    }

    bool chance(double p) { return uniform(0.0, 1.0) < p; }

    // Derive an unrelated stream, e.g. one per peer.
    static std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
        std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

private:
    std::mt19937_64 eng_;
};

} // namespace geop2p
