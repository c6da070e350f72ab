#ifndef SEPNET_RNG_HPP
#define SEPNET_RNG_HPP

#include <algorithm>
#include <cstdint>
#include <random>

namespace sepnet {

/// 64-bit Mersenne Twister seeded from a single 64-bit value. Sequences are
/// reproducible within one build; distributions come from <random>, so values
/// are not guaranteed identical across standard library implementations.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }

    double normal(double mean = 0.0, double stddev = 1.0) {
        return std::normal_distribution<double>(mean, stddev)(engine_);
    }

    /// Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n) {
        return std::uniform_int_distribution<std::uint64_t>(0, n - 1)(engine_);
    }

    template <typename It>
    void shuffle(It first, It last) {
        // Fisher-Yates with our own draw so the permutation does not depend on
        // std::shuffle's unspecified algorithm.
        auto n = static_cast<std::uint64_t>(last - first);
        for (std::uint64_t i = n; i > 1; --i) {
            std::uint64_t j = below(i);
            std::iter_swap(first + static_cast<std::ptrdiff_t>(i - 1), first + static_cast<std::ptrdiff_t>(j));
        }
    }

    /// Derives an independent stream, e.g. one per epoch.
    static Rng derive(std::uint64_t seed, std::uint64_t stream) {
        std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                          static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
        Rng rng;
        rng.engine_.seed(seq);
        return rng;
    }

private:
    std::mt19937_64 engine_;
};

}  // namespace sepnet

#endif  // SEPNET_RNG_HPP
