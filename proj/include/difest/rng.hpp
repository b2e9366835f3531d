#pragma once

// Counter-based random streams. Every stream is a pure function of
// (seed, stream tag, step, node), so trajectories replay bit-identically
// regardless of how many workers run or in which order draws happen.

#include <cmath>
#include <cstdint>

namespace difest {

namespace detail {

inline constexpr std::uint64_t kGamma = 0x9E3779B97F4A7C15ULL;

inline std::uint64_t mix64(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

inline std::uint64_t combine(std::uint64_t a, std::uint64_t b) {
    return mix64(a + kGamma * (b + 1));
}

} // namespace detail

// Stream tags keep the regressor, noise and search draws independent even
// when keyed by the same (seed, step, node).
enum class StreamTag : std::uint64_t {
    noise = 0x6e6f697365ULL,
    regressor = 0x72656772ULL,
    search = 0x73726368ULL,
    trial = 0x7472696cULL,
    generic = 0x67656e72ULL,
};

/// Deterministic splitmix64 stream seeded from a key tuple.
class RandomStream {
public:
    RandomStream(std::uint64_t seed, StreamTag tag, std::uint64_t step = 0,
                 std::uint64_t node = 0)
        : state_(detail::combine(
              detail::combine(detail::combine(seed, static_cast<std::uint64_t>(tag)), step),
              node)) {}

    std::uint64_t next_u64() {
        state_ += detail::kGamma;
        return detail::mix64(state_);
    }

    /// Uniform in [0, 1) with 53 random bits.
    double uniform01() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double a, double b) { return a + (b - a) * uniform01(); }

    /// Standard normal via Box-Muller; one draw per call, cached pair unused
    /// on purpose so the draw count stays predictable.
    double gaussian() {
        double u1 = uniform01();
        double u2 = uniform01();
        if (u1 < 1e-300) u1 = 1e-300;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }

private:
    std::uint64_t state_;
};

/// Seed for trial `j` derived from a master seed; independent of trial count.
inline std::uint64_t derive_trial_seed(std::uint64_t master, std::uint64_t trial) {
    return detail::combine(detail::combine(master, static_cast<std::uint64_t>(StreamTag::trial)),
                           trial);
}

} // namespace difest
