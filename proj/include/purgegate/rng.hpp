#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string_view>

namespace pg {

// splitmix64, used to derive per-purpose streams from one root seed.
inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// xoshiro256** with hand-rolled distributions. std:: distributions are
// implementation-defined, which would break cross-toolchain reproducibility
// of corruption seeds and golden tables.
class Rng {
public:
    explicit Rng(std::uint64_t seed) {
        std::uint64_t sm = seed;
        for (auto& s : state_) s = splitmix64(sm);
    }

    std::uint64_t next_u64() {
        const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
        const std::uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    // uniform in [0, 1)
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // index in [0, n)
    std::size_t index(std::size_t n) { return static_cast<std::size_t>(uniform() * static_cast<double>(n)); }

    // Box-Muller; one value per call keeps the stream position obvious.
    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    std::array<double, 3> unit_vector3() {
        // Gaussian-then-normalize, exact uniform on the sphere.
        for (;;) {
            const std::array<double, 3> g = {normal(), normal(), normal()};
            const double n = std::sqrt(g[0] * g[0] + g[1] * g[1] + g[2] * g[2]);
            if (n > 1e-12) return {g[0] / n, g[1] / n, g[2] / n};
        }
    }

    // Derives an independent stream for a named purpose from the same root.
    static Rng derive(std::uint64_t root_seed, std::string_view purpose) {
        std::uint64_t h = 0xcbf29ce484222325ULL;
        for (const char c : purpose) {
            h ^= static_cast<std::uint64_t>(static_cast<unsigned char>(c));
            h *= 0x100000001b3ULL;
        }
        std::uint64_t mix = root_seed ^ h;
        return Rng(splitmix64(mix));
    }

private:
    static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

    std::array<std::uint64_t, 4> state_{};
};

} // namespace pg
