#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace dirlik {

/// Deterministic random stream. All transforms are implemented here so that
/// identical seeds give bitwise-identical draws independent of the standard
/// library in use. Sub-streams are derived with a splitmix64 hash, so the
/// per-environment streams of a simulation are independent of each other and
/// of the consumption order.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    /// Derived stream for (seed, stream_id); used to give each environment
    /// its own generator.
    Rng derive(std::uint64_t stream_id) const {
        return Rng(splitmix64(seed_mix_ ^ (0x9e3779b97f4a7c15ULL + stream_id)));
    }

    double uniform() {  // in [0, 1)
        return (engine_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    double normal() {
        // Polar Box-Muller, second value cached.
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u, v, s;
        do {
            u = 2.0 * uniform() - 1.0;
            v = 2.0 * uniform() - 1.0;
            s = u * u + v * v;
        } while (s >= 1.0 || s == 0.0);
        const double f = std::sqrt(-2.0 * std::log(s) / s);
        spare_ = v * f;
        have_spare_ = true;
        return u * f;
    }

    double laplace(double scale) {
        const double u = uniform() - 0.5;
        return (u < 0 ? scale : -scale) * std::log(1.0 - 2.0 * std::abs(u));
    }

    std::uint64_t next_u64() { return engine_(); }

private:
    std::mt19937_64 engine_;
    std::uint64_t seed_mix_ = engine_();  // consumed once; decorrelates derive()
    bool have_spare_ = false;
    double spare_ = 0.0;

    static std::uint64_t splitmix64(std::uint64_t x) {
        x += 0x9e3779b97f4a7c15ULL;
        x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
        x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
        return x ^ (x >> 31);
    }
};

}  // namespace dirlik
