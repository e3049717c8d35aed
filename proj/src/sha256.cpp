#include "voltlab/sha256.hpp"

#include "voltlab/errors.hpp"

#include <bit>
#include <cstring>

namespace voltlab {

namespace {

constexpr std::array<std::uint32_t, 64> kRound = {
    0x428a2f98, 0x71374491, 0xb5c0fbcf, 0xe9b5dba5, 0x3956c25b, 0x59f111f1, 0x923f82a4, 0xab1c5ed5,
    0xd807aa98, 0x12835b01, 0x243185be, 0x550c7dc3, 0x72be5d74, 0x80deb1fe, 0x9bdc06a7, 0xc19bf174,
    0xe49b69c1, 0xefbe4786, 0x0fc19dc6, 0x240ca1cc, 0x2de92c6f, 0x4a7484aa, 0x5cb0a9dc, 0x76f988da,
    0x983e5152, 0xa831c66d, 0xb00327c8, 0xbf597fc7, 0xc6e00bf3, 0xd5a79147, 0x06ca6351, 0x14292967,
    0x27b70a85, 0x2e1b2138, 0x4d2c6dfc, 0x53380d13, 0x650a7354, 0x766a0abb, 0x81c2c92e, 0x92722c85,
    0xa2bfe8a1, 0xa81a664b, 0xc24b8b70, 0xc76c51a3, 0xd192e819, 0xd6990624, 0xf40e3585, 0x106aa070,
    0x19a4c116, 0x1e376c08, 0x2748774c, 0x34b0bcb5, 0x391c0cb3, 0x4ed8aa4a, 0x5b9cca4f, 0x682e6ff3,
    0x748f82ee, 0x78a5636f, 0x84c87814, 0x8cc70208, 0x90befffa, 0xa4506ceb, 0xbef9a3f7, 0xc67178f2,
};

constexpr std::array<std::uint32_t, 8> kInit = {
    0x6a09e667, 0xbb67ae85, 0x3c6ef372, 0xa54ff53a, 0x510e527f, 0x9b05688c, 0x1f83d9ab, 0x5be0cd19,
};

inline std::uint32_t rotr(std::uint32_t x, int n) { return std::rotr(x, n); }

} // namespace

Sha256::Sha256(StoreHook hook, std::uint64_t first_store_index)
    : h_(kInit), hook_(std::move(hook)), first_store_(first_store_index), store_index_(first_store_index) {}

void Sha256::store(std::uint32_t* words) {
    if (hook_) {
        std::array<std::uint32_t, 4> w{words[0], words[1], words[2], words[3]};
        hook_(store_index_, w);
        std::memcpy(words, w.data(), sizeof w);
    }
    ++store_index_;
}

void Sha256::compress(const std::uint8_t* block) {
    std::array<std::uint32_t, 64> w;
    for (int t = 0; t < 16; ++t)
        w[t] = (std::uint32_t{block[4 * t]} << 24) | (std::uint32_t{block[4 * t + 1]} << 16) |
               (std::uint32_t{block[4 * t + 2]} << 8) | std::uint32_t{block[4 * t + 3]};
    for (int t = 16; t < 64; ++t) {
        const auto s0 = rotr(w[t - 15], 7) ^ rotr(w[t - 15], 18) ^ (w[t - 15] >> 3);
        const auto s1 = rotr(w[t - 2], 17) ^ rotr(w[t - 2], 19) ^ (w[t - 2] >> 10);
        w[t] = w[t - 16] + s0 + w[t - 7] + s1;
        if (t % 4 == 3)
            store(&w[t - 3]); // schedule written back four words at a time
    }

    auto a = h_[0], b = h_[1], c = h_[2], d = h_[3], e = h_[4], f = h_[5], g = h_[6], h = h_[7];
    for (int t = 0; t < 64; ++t) {
        const auto t1 = h + (rotr(e, 6) ^ rotr(e, 11) ^ rotr(e, 25)) + ((e & f) ^ (~e & g)) + kRound[t] + w[t];
        const auto t2 = (rotr(a, 2) ^ rotr(a, 13) ^ rotr(a, 22)) + ((a & b) ^ (a & c) ^ (b & c));
        h = g;
        g = f;
        f = e;
        e = d + t1;
        d = c;
        c = b;
        b = a;
        a = t1 + t2;
    }
    std::array<std::uint32_t, 8> next = {h_[0] + a, h_[1] + b, h_[2] + c, h_[3] + d,
                                         h_[4] + e, h_[5] + f, h_[6] + g, h_[7] + h};
    store(&next[0]);
    store(&next[4]);
    h_ = next;
    ++compressions_;
}

void Sha256::update(std::span<const std::uint8_t> data) {
    length_ += data.size();
    std::size_t i = 0;
    if (buffered_) {
        const auto take = std::min(data.size(), 64 - buffered_);
        std::memcpy(buffer_.data() + buffered_, data.data(), take);
        buffered_ += take;
        i = take;
        if (buffered_ < 64)
            return;
        compress(buffer_.data());
        buffered_ = 0;
    }
    for (; i + 64 <= data.size(); i += 64)
        compress(data.data() + i);
    std::memcpy(buffer_.data(), data.data() + i, data.size() - i);
    buffered_ = data.size() - i;
}

Digest Sha256::finish() {
    const std::uint64_t bits = length_ * 8;
    std::array<std::uint8_t, 72> pad{};
    pad[0] = 0x80;
    const std::size_t pad_len = (buffered_ < 56 ? 56 - buffered_ : 120 - buffered_);
    for (int i = 0; i < 8; ++i)
        pad[pad_len + i] = static_cast<std::uint8_t>(bits >> (56 - 8 * i));
    const auto saved = length_;
    update(std::span(pad.data(), pad_len + 8));
    length_ = saved;

    Digest out;
    for (int i = 0; i < 8; ++i)
        for (int j = 0; j < 4; ++j)
            out[4 * i + j] = static_cast<std::uint8_t>(h_[i] >> (24 - 8 * j));
    return out;
}

Digest sha256(std::span<const std::uint8_t> data) {
    Sha256 s;
    s.update(data);
    return s.finish();
}

HmacRun hmac_sha256(std::span<const std::uint8_t> key, std::span<const std::uint8_t> message, const StoreHook& hook) {
    std::array<std::uint8_t, 64> k{};
    std::uint64_t key_compressions = 0, key_stores = 0;
    if (key.size() > 64) {
        Sha256 kh(hook);
        kh.update(key);
        const auto d = kh.finish();
        key_compressions = kh.compressions();
        key_stores = kh.stores();
        std::memcpy(k.data(), d.data(), d.size());
    } else {
        std::memcpy(k.data(), key.data(), key.size());
    }
    std::array<std::uint8_t, 64> ipad, opad;
    for (int i = 0; i < 64; ++i) {
        ipad[i] = k[i] ^ 0x36;
        opad[i] = k[i] ^ 0x5c;
    }

    Sha256 inner(hook, key_stores);
    inner.update(ipad);
    inner.update(message);
    const auto inner_digest = inner.finish();

    Sha256 outer(hook, inner.next_store_index());
    outer.update(opad);
    outer.update(inner_digest);
    HmacRun run;
    run.mac = outer.finish();
    run.compressions = key_compressions + inner.compressions() + outer.compressions();
    run.stores = outer.next_store_index();
    return run;
}

std::uint64_t hmac_compressions(std::size_t message_bytes) {
    // inner: ipad block + message + padding; outer: opad block + digest + padding = 2
    const std::uint64_t inner_bytes = 64 + message_bytes + 9;
    return (inner_bytes + 63) / 64 + 2;
}

std::string to_hex(std::span<const std::uint8_t> bytes) {
    static constexpr char digits[] = "0123456789abcdef";
    std::string out;
    out.reserve(bytes.size() * 2);
    for (auto b : bytes) {
        out += digits[b >> 4];
        out += digits[b & 0xF];
    }
    return out;
}

std::vector<std::uint8_t> from_hex(std::string_view hex) {
    if (hex.size() % 2)
        throw FormatError("odd-length hex string");
    auto nibble = [](char c) -> int {
        if (c >= '0' && c <= '9') return c - '0';
        if (c >= 'a' && c <= 'f') return c - 'a' + 10;
        if (c >= 'A' && c <= 'F') return c - 'A' + 10;
        throw FormatError(std::string("bad hex digit '") + c + "'");
    };
    std::vector<std::uint8_t> out(hex.size() / 2);
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = static_cast<std::uint8_t>(nibble(hex[2 * i]) << 4 | nibble(hex[2 * i + 1]));
    return out;
}

std::span<const std::uint8_t> as_bytes(std::string_view s) {
    return {reinterpret_cast<const std::uint8_t*>(s.data()), s.size()};
}

} // namespace voltlab
