#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>

#include "dda/tensor.hpp"

namespace dda {

/// PCG32 generator with a fully explicit, serializable state.
/// Gaussian draws use Box-Muller on two fresh uniforms (no cached spare),
/// so the state is exactly (state, inc) at every point.
class Rng {
  public:
    Rng() : Rng(0x853c49e6748fea9bULL, 0) {}
    explicit Rng(uint64_t seed, uint64_t stream = 0) { reseed(seed, stream); }

    void reseed(uint64_t seed, uint64_t stream) {
        state_ = 0;
        inc_ = (stream << 1u) | 1u;
        next_u32();
        state_ += seed;
        next_u32();
    }

    uint32_t next_u32() {
        uint64_t old = state_;
        state_ = old * 6364136223846793005ULL + inc_;
        uint32_t xorshifted = static_cast<uint32_t>(((old >> 18u) ^ old) >> 27u);
        uint32_t rot = static_cast<uint32_t>(old >> 59u);
        return (xorshifted >> rot) | (xorshifted << ((-rot) & 31u));
    }

    uint64_t next_u64() {
        uint64_t hi = next_u32();
        return (hi << 32) | next_u32();
    }

    /// Uniform double in [0, 1).
    double uniform() { return next_u32() * (1.0 / 4294967296.0); }

    /// Uniform double in [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n).
    uint32_t uniform_int(uint32_t n) {
        // Lemire rejection-free would bias slightly; plain rejection keeps it exact.
        uint32_t threshold = (-n) % n;
        for (;;) {
            uint32_t r = next_u32();
            if (r >= threshold) return r % n;
        }
    }

    /// Standard normal via Box-Muller; consumes exactly two uniforms.
    double normal() {
        double u1 = 1.0 - uniform();  // (0, 1]
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
    }

    uint64_t state() const { return state_; }
    uint64_t inc() const { return inc_; }
    void restore(uint64_t state, uint64_t inc) {
        state_ = state;
        inc_ = inc;
    }

  private:
    uint64_t state_ = 0;
    uint64_t inc_ = 1;
};

/// Stable 64-bit hash for deriving named substreams and hashing file contents.
inline uint64_t fnv1a64(std::string_view s, uint64_t h = 0xcbf29ce484222325ULL) {
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline Rng named_stream(uint64_t master_seed, std::string_view name, uint64_t index = 0) {
    uint64_t stream = fnv1a64(name) ^ (0x9e3779b97f4a7c15ULL * (index + 1));
    return Rng(master_seed ^ (index * 0xbf58476d1ce4e5b9ULL), stream);
}

template <typename T>
Tensor3<T> random_normal(int c, int h, int w, Rng& rng) {
    Tensor3<T> t(c, h, w);
    for (auto& x : t.v) x = static_cast<T>(rng.normal());
    return t;
}

template <typename T>
Tensor3<T> random_uniform(int c, int h, int w, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor3<T> t(c, h, w);
    for (auto& x : t.v) x = static_cast<T>(rng.uniform(lo, hi));
    return t;
}

}  // namespace dda
