#pragma once

// SHA-256 and HMAC-SHA256 with a hook on the 128-bit stores of the
// compression function: twelve stores of the expanded message schedule
// (four words each) and two of the feed-forward state per block.

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace voltlab {

using Digest = std::array<std::uint8_t, 32>;

inline constexpr int kStoresPerCompression = 14;

/// Called with the store's running index and its four 32-bit words; may modify them.
using StoreHook = std::function<void(std::uint64_t store_index, std::array<std::uint32_t, 4>& words)>;

class Sha256 {
public:
    explicit Sha256(StoreHook hook = {}, std::uint64_t first_store_index = 0);
    void update(std::span<const std::uint8_t> data);
    Digest finish();

    std::uint64_t compressions() const { return compressions_; }
    std::uint64_t stores() const { return store_index_ - first_store_; }
    std::uint64_t next_store_index() const { return store_index_; }

private:
    void compress(const std::uint8_t* block);
    void store(std::uint32_t* words);

    std::array<std::uint32_t, 8> h_;
    std::array<std::uint8_t, 64> buffer_{};
    std::size_t buffered_ = 0;
    std::uint64_t length_ = 0;
    std::uint64_t compressions_ = 0;
    StoreHook hook_;
    std::uint64_t first_store_;
    std::uint64_t store_index_;
};

Digest sha256(std::span<const std::uint8_t> data);

struct HmacRun {
    Digest mac;
    std::uint64_t compressions = 0;
    std::uint64_t stores = 0;
};

HmacRun hmac_sha256(std::span<const std::uint8_t> key, std::span<const std::uint8_t> message,
                    const StoreHook& hook = {});

/// Number of compressions an HMAC over `message_bytes` performs (keys up to 64 bytes).
std::uint64_t hmac_compressions(std::size_t message_bytes);

std::string to_hex(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> from_hex(std::string_view hex);
std::span<const std::uint8_t> as_bytes(std::string_view s);

} // namespace voltlab
