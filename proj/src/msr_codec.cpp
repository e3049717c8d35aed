#include "voltlab/msr_codec.hpp"

#include "voltlab/errors.hpp"

#include <cctype>
#include <charconv>
#include <cstdio>

namespace voltlab {

namespace {

constexpr std::uint64_t kBit63 = std::uint64_t{1} << 63;
constexpr int kDomainShift = 40;
constexpr int kCommandShift = 32;
constexpr int kOffsetShift = 21;
constexpr int kModeShift = 20;
constexpr int kStaticShift = 8;
constexpr std::uint64_t kOffsetMask = 0x7FF;  // 11 bits
constexpr std::uint64_t kStaticMask = 0xFFF;  // [19:8]

bool known_command(std::uint64_t c) {
    return c == static_cast<std::uint64_t>(MailboxOp::ReadVoltage) || c == static_cast<std::uint64_t>(MailboxOp::WriteVoltage);
}

std::string lower(std::string_view s) {
    std::string out(s);
    for (auto& ch : out)
        ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    return out;
}

} // namespace

std::uint64_t encode_mailbox(const MailboxCommand& cmd) {
    std::uint64_t word = kBit63;
    word |= (static_cast<std::uint64_t>(cmd.domain) & 0x7) << kDomainShift;
    word |= static_cast<std::uint64_t>(cmd.command) << kCommandShift;
    if (cmd.mode == VoltageMode::Offset) {
        if (cmd.offset_mv < kMinOffsetMv || cmd.offset_mv > kMaxOffsetMv)
            throw RangeError("offset " + std::to_string(cmd.offset_mv) + " mV outside [-1024, 1023]");
        auto field = static_cast<std::uint64_t>(static_cast<std::int64_t>(cmd.offset_mv)) & kOffsetMask;
        word |= field << kOffsetShift;
    } else {
        if (cmd.static_units > kMaxStaticUnits)
            throw RangeError("static voltage " + std::to_string(cmd.static_units) + "/1024 V above 2 V");
        word |= std::uint64_t{1} << kModeShift;
        word |= static_cast<std::uint64_t>(cmd.static_units) << kStaticShift;
    }
    return word;
}

MailboxCommand decode_mailbox(std::uint64_t word) {
    if ((word & kBit63) == 0)
        throw FormatError("OC mailbox word " + hex(word, 16) + " has bit 63 clear");
    const std::uint64_t domain = (word >> kDomainShift) & 0x7;
    const std::uint64_t command = (word >> kCommandShift) & 0xFF;
    if (domain > static_cast<std::uint64_t>(Domain::SystemAgent))
        throw FormatError("unknown OC mailbox domain " + std::to_string(domain));
    if (!known_command(command))
        throw FormatError("unknown OC mailbox command " + hex(command));

    MailboxCommand cmd;
    cmd.domain = static_cast<Domain>(domain);
    cmd.command = static_cast<MailboxOp>(command);
    if (((word >> kModeShift) & 1) == 0) {
        cmd.mode = VoltageMode::Offset;
        auto field = static_cast<std::int64_t>((word >> kOffsetShift) & kOffsetMask);
        if (field & 0x400)
            field -= 0x800;
        cmd.offset_mv = static_cast<int>(field);
    } else {
        cmd.mode = VoltageMode::Static;
        cmd.static_units = static_cast<std::uint32_t>((word >> kStaticShift) & kStaticMask);
    }
    return cmd;
}

MsrWrite mailbox_write(const MailboxCommand& cmd) {
    return MsrWrite{msr::kOcMailbox, encode_mailbox(cmd)};
}

PState::PState(unsigned ratio, unsigned base_clock_mhz) : base_clock_mhz_(base_clock_mhz) {
    if (ratio == 0 || ratio > 255)
        throw RangeError("P-state ratio " + std::to_string(ratio) + " outside 1..255");
    if (base_clock_mhz == 0)
        throw RangeError("base clock must be positive");
    ratio_ = static_cast<std::uint8_t>(ratio);
}

unsigned pstate_frequency(const PState& p) {
    return static_cast<unsigned>(p.ratio()) * p.base_clock_mhz();
}

std::vector<MsrWrite> plan_pstate_request(const PState& p, PStateInterface iface) {
    const std::uint64_t r = p.ratio();
    if (iface == PStateInterface::Eist) {
        return {
            MsrWrite{msr::kMiscPwrMgmt, 0x1, 0x1},
            MsrWrite{msr::kPerfCtl, r << 8, 0xFF00},
        };
    }
    return {MsrWrite{msr::kHwpRequest, r | (r << 8) | (r << 16), 0xFFFFFF}};
}

std::uint64_t parse_hex_word(std::string_view text) {
    std::string_view digits = text;
    if (digits.size() > 2 && digits[0] == '0' && (digits[1] == 'x' || digits[1] == 'X'))
        digits.remove_prefix(2);
    std::uint64_t value = 0;
    auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), value, 16);
    if (digits.empty() || ec != std::errc{} || ptr != digits.data() + digits.size())
        throw FormatError("not a 64-bit hexadecimal word: '" + std::string(text) + "'");
    return value;
}

PState parse_pstate(std::string_view text) {
    std::string_view digits = text;
    int base = 10;
    if (digits.size() > 2 && digits[0] == '0' && (digits[1] == 'x' || digits[1] == 'X')) {
        digits.remove_prefix(2);
        base = 16;
    }
    unsigned value = 0;
    auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), value, base);
    if (digits.empty() || ec != std::errc{} || ptr != digits.data() + digits.size())
        throw RangeError("not a P-state ratio: '" + std::string(text) + "'");
    return PState(value);
}

std::string hex(std::uint64_t value, int min_digits) {
    char buf[24];
    std::snprintf(buf, sizeof buf, "0x%0*llx", min_digits, static_cast<unsigned long long>(value));
    return buf;
}

std::string_view to_string(Domain d) {
    switch (d) {
    case Domain::Cores: return "cores";
    case Domain::CoreGpu: return "gpu";
    case Domain::LlcRing: return "llc";
    case Domain::SystemAgent: return "system-agent";
    }
    return "?";
}

std::string_view to_string(MailboxOp op) {
    return op == MailboxOp::ReadVoltage ? "read-voltage" : "write-voltage";
}

std::string_view to_string(VoltageMode m) {
    return m == VoltageMode::Offset ? "offset" : "static";
}

Domain parse_domain(std::string_view name) {
    const auto n = lower(name);
    if (n == "cores" || n == "core" || n == "0") return Domain::Cores;
    if (n == "gpu" || n == "core-gpu" || n == "1") return Domain::CoreGpu;
    if (n == "llc" || n == "ring" || n == "llc-ring" || n == "2") return Domain::LlcRing;
    if (n == "system-agent" || n == "sa" || n == "3") return Domain::SystemAgent;
    throw FormatError("unknown domain '" + std::string(name) + "'");
}

MailboxOp parse_mailbox_op(std::string_view name) {
    const auto n = lower(name);
    if (n == "read" || n == "read-voltage" || n == "0x10") return MailboxOp::ReadVoltage;
    if (n == "write" || n == "write-voltage" || n == "0x11") return MailboxOp::WriteVoltage;
    throw FormatError("unknown mailbox command '" + std::string(name) + "'");
}

VoltageMode parse_voltage_mode(std::string_view name) {
    const auto n = lower(name);
    if (n == "offset") return VoltageMode::Offset;
    if (n == "static") return VoltageMode::Static;
    throw FormatError("unknown voltage mode '" + std::string(name) + "'");
}

} // namespace voltlab
