#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>

namespace probint {

/// SplitMix64 finalizer. Used to derive child seeds (per tau level, per experiment).
[[nodiscard]] constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
    z += 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

[[nodiscard]] constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t salt) noexcept {
    return mix64(seed ^ mix64(salt + 0x632BE59BD9B4E019ULL));
}

/// Identifies one independent substream. Distinct keys give disjoint counter ranges
/// under the same seed, so the draw for (replicate, step) never depends on the order
/// in which replicates are simulated.
struct StreamKey {
    std::uint64_t seed = 0;
    std::uint32_t replicate = 0;
    std::uint32_t step = 0;
    std::uint32_t purpose = 0;
};

/// Philox4x32-10 (Salmon et al., SC'11) exposed as a UniformRandomBitGenerator.
/// The 64-bit key is the seed; the upper three counter words hold (purpose, step, replicate)
/// and the lowest word counts blocks within the substream.
class Philox4x32 {
public:
    using result_type = std::uint32_t;

    explicit Philox4x32(const StreamKey& key) noexcept
        : key_{static_cast<std::uint32_t>(key.seed), static_cast<std::uint32_t>(key.seed >> 32)},
          counter_{0U, key.purpose, key.step, key.replicate} {}

    static constexpr result_type min() noexcept { return 0; }
    static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

    result_type operator()() noexcept {
        if (pos_ == 4) {
            refill();
        }
        return block_[pos_++];
    }

    /// Uniform double in the open interval (0, 1) built from 53 random bits.
    double uniform_open() noexcept {
        const std::uint64_t hi = (*this)();
        const std::uint64_t lo = (*this)();
        const std::uint64_t bits = ((hi << 32) | lo) >> 11;
        return (static_cast<double>(bits) + 0.5) * 0x1.0p-53;
    }

    /// Raw block function, exposed for known-answer tests.
    static std::array<std::uint32_t, 4> block(std::array<std::uint32_t, 4> ctr,
                                              std::array<std::uint32_t, 2> key) noexcept {
        for (int round = 0; round < 10; ++round) {
            const std::uint64_t p0 = static_cast<std::uint64_t>(kMul0) * ctr[0];
            const std::uint64_t p1 = static_cast<std::uint64_t>(kMul1) * ctr[2];
            const auto hi0 = static_cast<std::uint32_t>(p0 >> 32);
            const auto lo0 = static_cast<std::uint32_t>(p0);
            const auto hi1 = static_cast<std::uint32_t>(p1 >> 32);
            const auto lo1 = static_cast<std::uint32_t>(p1);
            ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
            key[0] += kWeyl0;
            key[1] += kWeyl1;
        }
        return ctr;
    }

private:
    static constexpr std::uint32_t kMul0 = 0xD2511F53U;
    static constexpr std::uint32_t kMul1 = 0xCD9E8D57U;
    static constexpr std::uint32_t kWeyl0 = 0x9E3779B9U;
    static constexpr std::uint32_t kWeyl1 = 0xBB67AE85U;

    void refill() noexcept {
        block_ = block(counter_, key_);
        ++counter_[0];
        pos_ = 0;
    }

    std::array<std::uint32_t, 2> key_;
    std::array<std::uint32_t, 4> counter_;
    std::array<std::uint32_t, 4> block_{};
    int pos_ = 4;
};

/// Standard normal variates via Box-Muller on the open-interval uniforms.
/// The sequence is a function of the stream key alone, on every standard library.
class NormalSource {
public:
    explicit NormalSource(const StreamKey& key) noexcept : engine_(key) {}

    double operator()() noexcept {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double u1 = engine_.uniform_open();
        const double u2 = engine_.uniform_open();
        const double radius = std::sqrt(-2.0 * std::log(u1));
        const double angle = 2.0 * 3.14159265358979323846 * u2;
        spare_ = radius * std::sin(angle);
        has_spare_ = true;
        return radius * std::cos(angle);
    }

    double uniform() noexcept { return engine_.uniform_open(); }

private:
    Philox4x32 engine_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace probint
