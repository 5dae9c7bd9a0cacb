#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace cddpc {

/// Counter-based Gaussian generator: sample k of (seed, stream) is a pure
/// function of the triple, so runs are reproducible regardless of how work is
/// split across threads.
class NoiseStream {
public:
    NoiseStream(std::uint64_t seed, std::uint64_t stream) : key_(mix(seed ^ mix(stream + 0x632be59bd9b4e019ull))) {}

    /// Standard normal sample number `index` (Box-Muller on two hashed uniforms).
    double normal(std::uint64_t index) const {
        const double u1 = uniform(2 * index);
        const double u2 = uniform(2 * index + 1);
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    /// Uniform in (0, 1].
    double uniform(std::uint64_t counter) const {
        const std::uint64_t bits = mix(key_ + mix(counter));
        return (static_cast<double>(bits >> 11) + 1.0) * 0x1.0p-53;
    }

private:
    // splitmix64 finalizer
    static std::uint64_t mix(std::uint64_t z) {
        z += 0x9e3779b97f4a7c15ull;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    std::uint64_t key_;
};

}  // namespace cddpc
