#pragma once

#include <cstdint>
#include <random>

namespace ncps {

/// SplitMix64 finalizer; decorrelates (seed, path, tag) triples before seeding.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// Per-path standard normal stream. Stream (seed, path, tag) is reproducible in
/// isolation, independent of how paths are scheduled across workers.
class NoiseStream {
public:
    NoiseStream(std::uint64_t seed, std::uint64_t path_index, std::uint64_t tag = 0) {
        const std::uint64_t a = mix64(seed);
        const std::uint64_t b = mix64(a ^ mix64(path_index + 1));
        const std::uint64_t c = mix64(b ^ mix64(tag + 0x51ed270b27f4a1c3ULL));
        std::seed_seq seq{static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32),
                          static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(b >> 32),
                          static_cast<std::uint32_t>(c), static_cast<std::uint32_t>(c >> 32)};
        engine_.seed(seq);
    }

    double normal() { return normal_(engine_); }
    double uniform() { return uniform_(engine_); }

private:
    std::mt19937_64 engine_;
    std::normal_distribution<double> normal_{0.0, 1.0};
    std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

}  // namespace ncps
