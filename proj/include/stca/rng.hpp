#pragma once

#include <cmath>
#include <cstdint>

namespace stca {

// Deterministic generator (splitmix64 core). Hand-rolled instead of
// <random> distributions so seeded runs are byte-identical across
// standard library implementations.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // uniform in [0, 1)
    double next_double() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) {
        return lo + (hi - lo) * next_double();
    }

    // uniform integer in [lo, hi] inclusive
    long long uniform_int(long long lo, long long hi) {
        const auto span = static_cast<std::uint64_t>(hi - lo) + 1ULL;
        return lo + static_cast<long long>(next_u64() % span);
    }

    // standard normal via Box-Muller, spare value cached
    double gaussian() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u = 0.0;
        do {
            u = next_double();
        } while (u <= 0.0);
        const double v = next_double();
        const double mag = std::sqrt(-2.0 * std::log(u));
        spare_ = mag * std::sin(2.0 * kPi * v);
        has_spare_ = true;
        return mag * std::cos(2.0 * kPi * v);
    }

    double gaussian(double mean, double stddev) {
        return mean + stddev * gaussian();
    }

private:
    static constexpr double kPi = 3.14159265358979323846;

    std::uint64_t state_ = 0;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

} // namespace stca
