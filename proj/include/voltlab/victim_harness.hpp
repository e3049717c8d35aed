#pragma once

// Victims and stressors on the simulated platform: the self-checking test
// loop, the enclave branch PoC and the HMAC-SHA256 validator. Faults enter
// only at eligible stores; everything else runs exactly.

#include "voltlab/mca_model.hpp"
#include "voltlab/mini_isa.hpp"
#include "voltlab/processor_model.hpp"
#include "voltlab/sha256.hpp"
#include "voltlab/trial_kernels.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace voltlab {

// --- stressors and bundled programs ---------------------------------------

/// listing2_shift_loop (alias listing2), twofish_avx (twofish), none. Throws UnknownStressor.
StressorSpec stressor_profile(std::string_view name);
std::vector<std::string> stressor_names();

std::filesystem::path bundled_program_path(std::string_view name);
MiniProgram bundled_program(std::string_view name);
std::vector<std::string> bundled_program_names();

// --- fault-scale calibration ----------------------------------------------

inline constexpr std::uint64_t kPocIterationsPerTry = 10'000;
inline constexpr std::size_t kHmacShortPayload = 32;
inline constexpr std::size_t kHmacLongPayload = 1024;

/// Eligible stores one try of the scenario's victim exposes.
std::uint64_t eligible_stores_per_try(Scenario scenario);

/// Operating point at which a calibration entry's rate was measured.
OperatingPoint calibration_reference(const ProcessorProfile& profile, const CalibrationPoint& point);

/// Per-store peak fault probability of a core for a scenario, before stressor and P-state factors.
double peak_fault_scale(const ProcessorProfile& profile, int core, Scenario scenario);

/// Peak scaled by the stressor multiplier and, for attacks, the P-state's attack scale.
double resolve_fault_scale(const ProcessorProfile& profile, int core, Scenario scenario, const PState& pstate,
                           const StressorSpec& stressor);

// --- test loop -------------------------------------------------------------

struct RunOutcome {
    enum class Kind { Match, Mismatch, Crash, ProcessorException } kind = Kind::Match;
    std::vector<BitFlipPattern> diff; // Mismatch: output XOR reference, one entry per differing word
    std::optional<CrashKind> crash;
    std::optional<ProcessorExceptionKind> exception;
    std::uint64_t iterations_executed = 0;
    std::uint64_t slices = 0;
};

std::string_view to_string(RunOutcome::Kind k);

struct TestLoopOptions {
    std::optional<int> core;      // physical core; defaults to the victim's
    double fault_scale = 0;
    std::uint64_t seed = 0;
    std::uint64_t trial = 0;
    MceLog* log = nullptr;
    McaConfig mca;
    bool decode_errors = true;
    std::uint64_t step_budget = kDefaultStepBudget;
};

/// Reference run at nominal voltage, then up to max_iters runs under the
/// environment's voltage, stopping at the first deviation, crash or exception.
RunOutcome run_test_loop(const ProcessorProfile& profile, const PlatformState& env, const MiniProgram& program,
                         const MachineState& input, std::uint64_t max_iters, const TestLoopOptions& options = {});

// --- attack victims --------------------------------------------------------

/// Slices around the fault-prone code that run undervolted; the rest run at nominal voltage.
struct UndervoltWindow {
    std::uint64_t first = 0;
    std::uint64_t last = ~std::uint64_t{0};
    bool contains(std::uint64_t slice) const { return slice >= first && slice <= last; }
};

struct VictimOptions {
    double fault_scale = 0;
    std::uint64_t seed = 0;
    std::uint64_t trial_base = 0;
    Execution execution = Execution::Parallel;
    std::uint64_t guard_slices = 10;
    /// Crashes tolerated before the campaign is aborted.
    std::uint64_t crash_budget = 1000;
    std::uint64_t poc_iterations = kPocIterationsPerTry;
    /// Execute every PoC iteration in the interpreter instead of sampling
    /// the try outcome from the exact per-iteration fault probability.
    bool interpret_poc = false;
};

struct TryOutcome {
    bool success = false;
    std::optional<CrashKind> crash;
};

struct VictimTally {
    std::uint64_t tries = 0;
    std::uint64_t successes = 0;
    std::uint64_t crashes = 0;
    std::uint64_t kernel_exceptions = 0;
    bool operator==(const VictimTally&) const = default;
};

/// Success = the flipped VPAND result sends the enclave into its recovery branch.
/// Throws AbortedWithPartial<VictimTally> when crashes exceed the budget.
VictimTally run_poc_enclave(const ProcessorProfile& profile, const PlatformState& env, int target_core,
                            std::uint64_t tries, const VictimOptions& options);

/// Success = the enclave rejects the correct MAC.
VictimTally run_hmac_victim(const ProcessorProfile& profile, const PlatformState& env, int target_core,
                            std::size_t payload_bytes, std::uint64_t tries, const VictimOptions& options);

/// Single tries, exposed for tests and the benchmark.
TryOutcome poc_try(const ProcessorProfile& profile, const PlatformState& env, int target_core,
                   const VictimOptions& options, std::uint64_t trial);
TryOutcome hmac_try(const ProcessorProfile& profile, const PlatformState& env, int target_core,
                    std::size_t payload_bytes, const VictimOptions& options, std::uint64_t trial);

struct HmacVictimData {
    std::vector<std::uint8_t> key;
    std::vector<std::uint8_t> message;
    Digest expected;
};

/// Fixed key and message of the validating enclave.
const HmacVictimData& hmac_victim_data(std::size_t payload_bytes);

} // namespace voltlab
