#include "voltlab/rng.hpp"

namespace voltlab {

std::uint64_t mix64(std::uint64_t x) noexcept {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t purpose) noexcept {
    return mix64(mix64(seed) ^ (purpose * 0xD1B54A32D192ED03ull));
}

CounterStream::CounterStream(std::uint64_t seed, std::uint64_t core, std::uint64_t trial)
    : key_(mix64(mix64(mix64(seed) ^ (core + 0x632BE59BD9B4E019ull)) ^ trial)) {}

std::uint64_t CounterStream::bits(std::uint64_t event, std::uint64_t lane) const noexcept {
    return mix64(mix64(key_ ^ (event * 0xA24BAED4963EE407ull)) + lane * 0x9FB21C651E98DF25ull);
}

double CounterStream::uniform(std::uint64_t event, std::uint64_t lane) const noexcept {
    return static_cast<double>(bits(event, lane) >> 11) * 0x1.0p-53;
}

double CounterStream::uniform(std::uint64_t event, std::uint64_t lane, double lo, double hi) const noexcept {
    return lo + (hi - lo) * uniform(event, lane);
}

} // namespace voltlab
