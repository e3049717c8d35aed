#pragma once

// Power-management MSR encodings: the OC Mailbox (0x150) word layout and the
// P-state control registers used to pin a ratio (EIST 0x199/0x1AA, HWP 0x774).

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace voltlab {

namespace msr {
inline constexpr std::uint32_t kOcMailbox = 0x150;
inline constexpr std::uint32_t kPerfCtl = 0x199;
inline constexpr std::uint32_t kThermInterrupt = 0x19B;
inline constexpr std::uint32_t kMiscEnable = 0x1A0;
inline constexpr std::uint32_t kMiscPwrMgmt = 0x1AA;
inline constexpr std::uint32_t kPackageThermInterrupt = 0x1B2;
inline constexpr std::uint32_t kPkgPowerLimit = 0x610;
inline constexpr std::uint32_t kPp0PowerLimit = 0x638;
inline constexpr std::uint32_t kPp1PowerLimit = 0x640;
inline constexpr std::uint32_t kHwpRequest = 0x774;
} // namespace msr

enum class Domain : std::uint8_t { Cores = 0x0, CoreGpu = 0x1, LlcRing = 0x2, SystemAgent = 0x3 };
enum class MailboxOp : std::uint8_t { ReadVoltage = 0x10, WriteVoltage = 0x11 };
enum class VoltageMode : std::uint8_t { Offset = 0x0, Static = 0x1 };

inline constexpr int kMinOffsetMv = -1024;
inline constexpr int kMaxOffsetMv = 1023;
inline constexpr std::uint32_t kMaxStaticUnits = 2047; // 2 V at 1/1024 V per unit
inline constexpr int kVoltageStepMv = 5;

struct MailboxCommand {
    Domain domain = Domain::Cores;
    MailboxOp command = MailboxOp::WriteVoltage;
    VoltageMode mode = VoltageMode::Offset;
    int offset_mv = 0;              // Offset mode only
    std::uint32_t static_units = 0; // Static mode only, 1/1024 V

    static MailboxCommand offset(Domain d, int mv) { return {d, MailboxOp::WriteVoltage, VoltageMode::Offset, mv, 0}; }
    static MailboxCommand fixed(Domain d, std::uint32_t units) { return {d, MailboxOp::WriteVoltage, VoltageMode::Static, 0, units}; }

    bool operator==(const MailboxCommand&) const = default;
};

struct MsrWrite {
    std::uint32_t msr_address = 0;
    std::uint64_t value = 0;
    /// Bits owned by this write; the rest of the register is preserved (read-modify-write).
    std::uint64_t mask = ~std::uint64_t{0};

    bool operator==(const MsrWrite&) const = default;
};

/// Bits [63], [42:40], [39:32], [31:21] offset, [20] mode, [19:8] static value.
std::uint64_t encode_mailbox(const MailboxCommand& cmd);
MailboxCommand decode_mailbox(std::uint64_t word);
MsrWrite mailbox_write(const MailboxCommand& cmd);

class PState {
public:
    PState() = default;
    /// Throws RangeError for ratio 0 or > 255.
    explicit PState(unsigned ratio, unsigned base_clock_mhz = 100);

    std::uint8_t ratio() const noexcept { return ratio_; }
    unsigned base_clock_mhz() const noexcept { return base_clock_mhz_; }

    auto operator<=>(const PState&) const = default;

private:
    std::uint8_t ratio_ = 0x20;
    unsigned base_clock_mhz_ = 100;
};

unsigned pstate_frequency(const PState& p);

enum class PStateInterface { Eist, Hwp };

/// EIST: 0x1AA bit 0 (manual control) then 0x199 ratio in [15:8].
/// HWP: 0x774 with min [7:0] = max [15:8] = desired [23:16] = ratio.
std::vector<MsrWrite> plan_pstate_request(const PState& p, PStateInterface iface);

/// Parses "0x1B", "1b" or "27"; throws RangeError on garbage or out-of-range ratios.
PState parse_pstate(std::string_view text);
std::uint64_t parse_hex_word(std::string_view text);
std::string hex(std::uint64_t value, int min_digits = 0);

std::string_view to_string(Domain d);
std::string_view to_string(MailboxOp op);
std::string_view to_string(VoltageMode m);
Domain parse_domain(std::string_view name);
MailboxOp parse_mailbox_op(std::string_view name);
VoltageMode parse_voltage_mode(std::string_view name);

} // namespace voltlab
