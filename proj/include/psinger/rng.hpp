#pragma once

#include <cmath>
#include <cstdint>

namespace psinger {

// Counter-free splitmix64 generator. Hand-rolled so that streams are
// bit-reproducible across standard libraries and runs.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    uint64_t next_u64() {
        uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    // [0, 1)
    double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // inclusive range
    int uniform_int(int lo, int hi) {
        return lo + int(next_u64() % uint64_t(hi - lo + 1));
    }

    // Box-Muller, no cached spare
    double normal() {
        double u1 = uniform(), u2 = uniform();
        if (u1 < 1e-300) u1 = 1e-300;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    // Derive an independent stream, e.g. per utterance or per parameter.
    static uint64_t derive(uint64_t seed, uint64_t stream) {
        Rng r(seed ^ (0x51A7C0DEull + stream * 0x2545F4914F6CDD1Dull));
        return r.next_u64();
    }

private:
    uint64_t state_;
};

// FNV-1a, used to derive per-parameter init streams from names.
inline uint64_t hash_str(const char* s) {
    uint64_t h = 1469598103934665603ull;
    for (; *s; ++s) h = (h ^ uint64_t(uint8_t(*s))) * 1099511628211ull;
    return h;
}

}  // namespace psinger
