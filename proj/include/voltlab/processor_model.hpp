#pragma once

// Simulated multi-core processor with one shared core voltage domain.
//
// Voltages are carried in millivolts internally. Per (core, P-state) the
// profile gives the top of the exploit window measured at the P-state's
// reference temperature; the window moves up by k mV per degree above it.
// Below the top lie the exploit window (uncorrected, MCA-invisible flips) and
// then the unstable region; above it the corrected-error band and then
// normal operation.

#include "voltlab/msr_codec.hpp"
#include "voltlab/rng.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace voltlab {

inline constexpr int kWordBytes = 16;
inline constexpr int kWordBits = 128;

enum class Scenario { Probe, Poc, Hmac32, Hmac1k };

std::string_view to_string(Scenario s);
Scenario parse_scenario(std::string_view name);
/// Attack scenarios scale with the P-state's attack susceptibility; the probe does not.
inline bool is_attack_scenario(Scenario s) { return s != Scenario::Probe; }

struct PStateProfile {
    PState pstate;
    double base_voltage_mv = 0;
    double reference_temperature_c = 0;
    std::vector<double> fault_voltage_mv; // per physical core, top of exploit window
    double attack_scale = 1.0;
    double exploit_window_mv = 5.0;
    double corrected_band_mv = 15.0;
};

struct CoreProfile {
    std::array<double, kWordBytes> byte_affinity{};
    std::array<double, 3> multiplicity{}; // P(1 flip), P(2 flips), P(3+ flips)
};

struct CalibrationPoint {
    int core = 0;
    Scenario scenario = Scenario::Probe;
    PState pstate;
    double success_rate = 0;                    // per victim try, listing-2 stressor
    std::optional<double> start_temperature_c;  // preheated campaign temperature
    std::string source;
};

struct ThermalParams {
    double time_constant_s = 10.0;
    double attacker_rise_c = 2.0;
    double victim_rise_c = 5.0;
    /// Heating of the reference workload (victim + best stressor on its partner)
    /// under which the P-state reference temperatures were measured.
    double reference_load_c = 15.0;
};

struct CrashParams {
    double base_rate = 0.02; // per slice at the instability boundary
    double reference_ratio = 0x1B;
};

struct ProcessorProfile {
    std::string model_name;
    std::string microarchitecture;
    int physical_cores = 0;
    int threads_per_core = 2;
    unsigned base_clock_mhz = 100;
    double temperature_coefficient_mv_per_c = 0.2;
    double voltage_noise_mv = 2.5;
    std::vector<std::pair<double, double>> fault_response{{0.0, 0.0}, {1.0, 1.0}};
    ThermalParams thermal;
    CrashParams crash;
    std::vector<PStateProfile> pstates;
    std::vector<CoreProfile> cores;
    std::vector<CalibrationPoint> calibration;
    std::map<std::string, std::string> provenance;

    int logical_cores() const { return physical_cores * threads_per_core; }
    const PStateProfile& pstate(const PState& p) const;
    const PStateProfile* find_pstate(const PState& p) const;
    void check_core(int core) const;
    const CalibrationPoint& calibration_for(int core, Scenario scenario) const;
    const CalibrationPoint* find_calibration(int core, Scenario scenario) const;
    /// Piecewise-linear fault response h(d) on d in [0, 1].
    double response(double depth) const;
};

ProcessorProfile parse_profile(std::string_view json_text);
ProcessorProfile load_profile(const std::filesystem::path& path);
/// Accepts a file path or the name of a bundled profile ("i7-7700K").
ProcessorProfile load_profile_by_name(std::string_view name_or_path);
std::filesystem::path bundled_profile_path(std::string_view model);
std::vector<std::string> bundled_profile_names();
void validate_profile(const ProcessorProfile& profile);

// --- voltage regions -------------------------------------------------------

enum class VoltageRegion { Normal = 0, CorrectedErrors = 1, ExploitWindow = 2, Unstable = 3 };

std::string_view to_string(VoltageRegion r);

inline double volts_to_mv(double volts) {
    // Snap to microvolts so profile values like 0.540 land exactly on 540 mV.
    return static_cast<double>(static_cast<long long>(volts * 1e6 + (volts >= 0 ? 0.5 : -0.5))) / 1e3;
}
inline double mv_to_volts(double mv) { return mv / 1e3; }

double window_top_mv(const ProcessorProfile& profile, int core, const PState& pstate, double temperature_c);

VoltageRegion classify_voltage_mv(const ProcessorProfile& profile, int core, const PState& pstate,
                                  double voltage_mv, double temperature_c);
/// Voltage in volts; throws UnknownCoreOrPState.
VoltageRegion classify_voltage(const ProcessorProfile& profile, int core, const PState& pstate,
                               double voltage_v, double temperature_c);

// --- platform state --------------------------------------------------------

enum class LogicalRole { Idle, Attacker, Victim, Stressor };
std::string_view to_string(LogicalRole r);

enum class StressorKind { Listing2ShiftLoop, TwofishAvx, None };

struct StressorSpec {
    StressorKind kind = StressorKind::None;
    std::string name = "none";
    double temperature_boost_c = 0.0;
    double fault_multiplier = 1.0;
};

struct InterferenceFlags {
    bool thermal_control_circuit = false;
    bool thermal_interrupt = false;
    bool pp0_pp1_limits = false;
    bool package_limits = false;

    bool all() const { return thermal_control_circuit && thermal_interrupt && pp0_pp1_limits && package_limits; }
    bool operator==(const InterferenceFlags&) const = default;
};

struct PlatformState {
    PState pstate;
    std::array<int, 4> applied_offset_mv{};                       // per mailbox domain
    std::array<std::optional<std::uint32_t>, 4> static_units{};   // static-mode overrides
    std::vector<double> temperature_c;                            // per physical core
    std::vector<LogicalRole> roles;                               // per logical core
    StressorSpec stressor;
    InterferenceFlags interference;                               // true = disabled
    std::uint64_t rng_seed = 0;
    double noise_amplitude_mv = 2.5;
    int physical_cores = 0;
    std::map<std::uint32_t, std::uint64_t> msr_file;

    static PlatformState initial(const ProcessorProfile& profile, const PState& pstate, std::uint64_t seed);

    int physical_of(int logical) const { return logical % physical_cores; }
    int partner_of(int logical) const { return (logical + physical_cores) % static_cast<int>(roles.size()); }
    /// Throws InvariantError when a second logical core would become the victim.
    void assign(int logical, LogicalRole role);
    std::optional<int> victim_logical() const;

    /// Nominal core-domain voltage (base of the current P-state plus offset), no noise.
    double nominal_mv(const ProcessorProfile& profile, bool undervolted = true) const;
    void set_offset_mv(int mv);

    /// Simulated MSR backend: updates the register file and the derived state.
    void apply(const MsrWrite& write);
    void apply(const std::vector<MsrWrite>& writes);
};

/// Idle temperature of the package at a P-state.
double ambient_temperature_c(const ProcessorProfile& profile, const PState& pstate);
double target_temperature_c(const ProcessorProfile& profile, const PlatformState& state, int physical_core);
/// First-order relaxation toward each core's target. dt = +inf jumps to equilibrium.
PlatformState update_temperature(const ProcessorProfile& profile, PlatformState state, double dt_s);

// --- faults ----------------------------------------------------------------

struct BitFlipPattern {
    std::uint64_t word_index = 0;
    std::vector<std::uint8_t> flipped_bits; // sorted, unique, 0..127

    std::vector<int> byte_positions() const;
    std::size_t multiplicity() const { return flipped_bits.size(); }
    std::array<std::uint64_t, 2> mask() const;
    static BitFlipPattern from_mask(std::uint64_t word_index, const std::array<std::uint64_t, 2>& mask);
    bool operator==(const BitFlipPattern&) const = default;
};

enum class CrashKind { Freeze, HardCrash, KernelException };
std::string_view to_string(CrashKind k);

/// Flip count bucket: 0 -> one flip, 1 -> two, 2 -> three or more.
inline int multiplicity_bucket(std::size_t flips) { return flips >= 3 ? 2 : static_cast<int>(flips) - 1; }

/// Draws byte positions from the core's affinity and the count from its
/// multiplicity distribution. Conditional on a fault having happened.
BitFlipPattern sample_pattern(const CoreProfile& core, const CounterStream& rng, std::uint64_t event,
                              std::uint64_t word_index);

struct OperatingPoint {
    int core = 0;
    PState pstate;
    double offset_mv = 0;
    double temperature_c = 0;
    double noise_mv = 2.5;
    double fault_scale = 0; // peak per-store probability incl. stressor and P-state factors
    std::optional<double> static_mv;
};

/// Fault, crash and region behaviour of one core at one operating point.
class FaultModel {
public:
    FaultModel(const ProcessorProfile& profile, const OperatingPoint& op);
    static FaultModel for_state(const ProcessorProfile& profile, const PlatformState& state, int core,
                                double fault_scale);

    double nominal_mv(bool undervolted = true) const { return undervolted ? nominal_mv_ : base_mv_; }
    double window_top_mv() const { return top_mv_; }
    double window_mv() const { return window_mv_; }
    double fault_scale() const { return scale_; }
    const OperatingPoint& operating_point() const { return op_; }

    VoltageRegion region(double voltage_mv) const;
    double slice_voltage(const CounterStream& rng, std::uint64_t event, bool undervolted = true) const;
    double fault_probability(double voltage_mv) const;
    double crash_probability(double voltage_mv) const;

    /// Most severe region the noise band around the nominal voltage reaches.
    VoltageRegion worst_region(bool undervolted = true) const;
    bool quiescent(bool undervolted = true) const { return worst_region(undervolted) == VoltageRegion::Normal; }

    std::optional<BitFlipPattern> sample_fault(double voltage_mv, const CounterStream& rng, std::uint64_t event,
                                               std::uint64_t word_index) const;
    std::optional<CrashKind> sample_crash(double voltage_mv, const CounterStream& rng, std::uint64_t event) const;

    /// Mean per-store fault probability over the slice noise (numerical quadrature).
    double expected_fault_probability() const;
    /// Limit of expected_fault_probability() for an unbounded scale.
    double fault_ceiling() const;

private:
    const ProcessorProfile* profile_;
    const CoreProfile* core_;
    OperatingPoint op_;
    double base_mv_;
    double nominal_mv_;
    double top_mv_;
    double window_mv_;
    double band_mv_;
    double scale_;
};

struct EligibleStoreEvent {
    std::uint64_t slice = 0;
    std::uint64_t word_index = 0;
    double fault_scale = 0;
};

std::optional<BitFlipPattern> sample_fault(const ProcessorProfile& profile, const PlatformState& state, int core,
                                           const EligibleStoreEvent& event, const CounterStream& rng);
std::optional<CrashKind> sample_crash(const ProcessorProfile& profile, const PlatformState& state,
                                      const CounterStream& rng, std::uint64_t slice);

/// Per-store fault scale such that a try with `eligible_per_try` independent
/// eligible stores succeeds with probability `target_rate` at `reference`.
/// Throws CalibrationError when the rate is out of reach.
double solve_fault_scale(const ProcessorProfile& profile, OperatingPoint reference, double target_rate,
                         std::uint64_t eligible_per_try);

/// Success probability of a try with n eligible stores at a given mean per-store probability.
double try_success_probability(double per_store, std::uint64_t eligible_per_try);

} // namespace voltlab
