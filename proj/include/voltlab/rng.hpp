#pragma once

#include <cstdint>

namespace voltlab {

/// Counter-based random stream. Every draw is a pure function of
/// (seed, core, trial, event, lane), so trials can run in any order or on
/// any thread and still see the same numbers.
class CounterStream {
public:
    CounterStream(std::uint64_t seed, std::uint64_t core, std::uint64_t trial);

    std::uint64_t bits(std::uint64_t event, std::uint64_t lane) const noexcept;
    /// Uniform in [0, 1).
    double uniform(std::uint64_t event, std::uint64_t lane) const noexcept;
    /// Uniform in [lo, hi).
    double uniform(std::uint64_t event, std::uint64_t lane, double lo, double hi) const noexcept;

    std::uint64_t key() const noexcept { return key_; }

private:
    std::uint64_t key_;
};

/// SplitMix64 finalizer.
std::uint64_t mix64(std::uint64_t x) noexcept;

/// Sub-seed for a named purpose, so phases of one campaign never share streams.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t purpose) noexcept;

// Lane assignments inside one event (slice).
namespace lane {
inline constexpr std::uint64_t kNoise = 0;
inline constexpr std::uint64_t kFault = 1;
inline constexpr std::uint64_t kCrash = 2;
inline constexpr std::uint64_t kCrashKind = 3;
inline constexpr std::uint64_t kMca = 4;
inline constexpr std::uint64_t kDecode = 5;
inline constexpr std::uint64_t kDecodeSurface = 6;
inline constexpr std::uint64_t kMultiplicity = 7;
inline constexpr std::uint64_t kPatternBase = 16; // byte/bit picks follow
} // namespace lane

} // namespace voltlab
