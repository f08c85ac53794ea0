#pragma once

// Counter-based random numbers (Philox4x32-10). A generator is addressed by
// (seed, stream, substream); two generators with different addresses never
// share output, so replications can run in any order on any thread and
// still reproduce bit-for-bit.

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>

namespace gcm {

/// Named streams. Keeping data generation, regression-side randomness and
/// Monte-Carlo calibration on separate streams means changing a backend
/// cannot shift the simulated datasets.
enum class Stream : std::uint32_t {
    model = 1,  // data-generating processes
    test = 2,   // randomness inside a test (sample splits)
    mc = 3,     // Monte-Carlo quantiles
    pilot = 4,  // pilot runs (clip bounds)
    hide = 5,   // hiding sampler noise and embedding offsets
    user = 6,
};

class Philox4x32 {
public:
    using Counter = std::array<std::uint32_t, 4>;
    using Key = std::array<std::uint32_t, 2>;

    static Counter block(Counter ctr, Key key) {
        for (int round = 0; round < 10; ++round) {
            if (round > 0) {
                key[0] += kWeyl0;
                key[1] += kWeyl1;
            }
            const std::uint64_t p0 = std::uint64_t{kMul0} * ctr[0];
            const std::uint64_t p1 = std::uint64_t{kMul1} * ctr[2];
            const auto hi0 = static_cast<std::uint32_t>(p0 >> 32);
            const auto lo0 = static_cast<std::uint32_t>(p0);
            const auto hi1 = static_cast<std::uint32_t>(p1 >> 32);
            const auto lo1 = static_cast<std::uint32_t>(p1);
            ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
        }
        return ctr;
    }

private:
    static constexpr std::uint32_t kMul0 = 0xD2511F53u;
    static constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
    static constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
    static constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;
};

class Rng {
public:
    using result_type = std::uint64_t;

    Rng(std::uint64_t seed, Stream stream, std::uint64_t substream = 0)
        : key_{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)},
          stream_(static_cast<std::uint32_t>(stream)),
          substream_(substream) {}

    static constexpr result_type min() { return 0; }
    static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

    result_type operator()() {
        if (cached_words_ == 0) refill();
        const std::size_t at = 4 - cached_words_;
        cached_words_ -= 2;
        return (std::uint64_t{buffer_[at]} << 32) | buffer_[at + 1];
    }

    /// Uniform on [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

    /// Uniform on {0, ..., bound-1}; bound > 0.
    std::uint64_t uniform_int(std::uint64_t bound) {
        const std::uint64_t limit = max() - (max() % bound + 1) % bound;
        std::uint64_t draw = (*this)();
        while (draw > limit) draw = (*this)();
        return draw % bound;
    }

    /// Standard normal via Box-Muller; the second variate is cached.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double u1 = 1.0 - uniform();  // (0, 1]
        const double u2 = uniform();
        const double radius = std::sqrt(-2.0 * std::log(u1));
        const double angle = 2.0 * std::numbers::pi * u2;
        spare_ = radius * std::sin(angle);
        has_spare_ = true;
        return radius * std::cos(angle);
    }

    std::uint64_t substream() const { return substream_; }

private:
    void refill() {
        const Philox4x32::Counter ctr{counter_++, stream_, static_cast<std::uint32_t>(substream_),
                                      static_cast<std::uint32_t>(substream_ >> 32)};
        buffer_ = Philox4x32::block(ctr, key_);
        cached_words_ = 4;
    }

    Philox4x32::Key key_;
    std::uint32_t stream_;
    std::uint64_t substream_;
    std::uint32_t counter_ = 0;
    Philox4x32::Counter buffer_{};
    std::size_t cached_words_ = 0;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

/// Substream index for replication `rep` of grid point `cell`.
inline std::uint64_t substream_of(std::uint64_t cell, std::uint64_t rep) {
    return (cell << 32) | (rep & 0xFFFFFFFFu);
}

}  // namespace gcm
