#pragma once

// The three attack phases on the simulated platform:
//   1. offline search for the exploitable voltage window on a clone machine
//   2. per-core probing for the most fault-prone core
//   3. the campaign against the victim, undervolting only around its window

#include "voltlab/mini_isa.hpp"
#include "voltlab/msr_codec.hpp"
#include "voltlab/processor_model.hpp"
#include "voltlab/trial_kernels.hpp"
#include "voltlab/victim_harness.hpp"

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace voltlab {

struct SystemConfig {
    std::vector<int> attack_group; // logical cores
    std::vector<int> victim_group;
    std::vector<std::string> drivers_disabled;
    PState pstate_pin;
    InterferenceFlags interference;
    int target_core = 0;      // physical
    int victim_logical = 0;
    int stressor_logical = 0; // partner of the victim thread
    int attacker_logical = 0;
};

struct SystemSetup {
    PlatformState state;
    SystemConfig config;
    std::vector<MsrWrite> plan; // already applied to `state`
};

/// Throws InvalidCore for a core outside the profile, UnknownCoreOrPState for an unknown P-state.
SystemSetup setup_system(const ProcessorProfile& profile, const PState& pstate, int target_core,
                         const StressorSpec& stressor, std::uint64_t seed = 0);

// --- phase 1 ---------------------------------------------------------------

struct CoreWindow {
    int core = 0;
    double window_top_mv = 0;
    int chosen_offset_mv = 0;
    std::uint64_t levels_tested = 0;
    std::uint64_t crashes = 0;
    std::uint64_t exceptions = 0;
};

struct VoltagePlan {
    std::string processor;
    PState pstate;
    int step_mv = kVoltageStepMv;
    std::vector<CoreWindow> cores;
    std::uint64_t crashes_during_search = 0;

    /// Throws UnknownCoreOrPState when the core was not searched.
    const CoreWindow& core(int physical) const;
};

struct Phase1Options {
    int start_offset_mv = 0;
    std::uint64_t max_iters = 5000;
    std::string stressor = "listing2_shift_loop";
    std::uint64_t seed = 0;
    int max_retries = 3;
    std::optional<std::vector<int>> cores; // default: every core
};

/// Descends in 5 mV steps until the test program's output deviates.
/// A crash reboots the clone and retries the level; a level that keeps
/// crashing is skipped. Throws NoWindowFound at the offset floor.
VoltagePlan phase1_find_window(const ProcessorProfile& clone, const MiniProgram& victim, const PState& pstate,
                               const Phase1Options& options = {});

// --- phase 2 ---------------------------------------------------------------

struct FaultStats {
    int core = 0;
    int offset_mv = 0;
    std::uint64_t tries = 0;
    std::uint64_t faults = 0;
    std::uint64_t crashes = 0;
    std::uint64_t exceptions = 0;
    double fault_rate = 0;
    std::array<std::uint64_t, 16> byte_histogram{};        // flipped bits per byte position
    std::array<std::uint64_t, 3> multiplicity_histogram{}; // faults with 1, 2, 3+ flipped bits
};

struct ProbeReport {
    std::string processor;
    PState pstate;
    std::vector<FaultStats> cores;
    int most_fault_prone = -1;
};

struct Phase2Options {
    std::string stressor = "listing2_shift_loop";
    std::uint64_t seed = 0;
    Execution execution = Execution::Parallel;
    std::uint64_t crash_budget = 1000;
};

/// Pins the victim to each planned core in turn at that core's offset.
/// Throws AbortedWithPartial<ProbeReport> when crashes exceed the budget.
ProbeReport phase2_probe_cores(const ProcessorProfile& profile, const VoltagePlan& plan, const MiniProgram& victim,
                               std::uint64_t tries_per_core, const Phase2Options& options = {});

// --- phase 3 ---------------------------------------------------------------

struct RunStats {
    std::uint64_t successes = 0;
    std::uint64_t tries = 0;
    std::uint64_t crashes = 0;
    bool operator==(const RunStats&) const = default;
};

struct CampaignResult {
    std::string processor;
    int target_core = 0;
    std::string scenario;
    std::string stressor;
    PState pstate;
    int offset_mv = 0;
    double voltage_mv = 0;
    double start_temperature_c = 0;
    double fault_scale = 0;
    std::uint64_t seed = 0;
    std::uint64_t tries = 0;
    std::uint64_t successes = 0;
    std::uint64_t crashes = 0;
    std::vector<RunStats> per_run;
    double mean_per_10k = 0;
    double sigma = 0; // population standard deviation over runs
    bool aborted = false;

    bool operator==(const CampaignResult&) const = default;
};

struct CampaignOptions {
    Scenario victim = Scenario::Poc;
    int target_core = 0;
    std::string stressor = "listing2_shift_loop";
    int runs = 5;
    std::uint64_t tries_per_run = 10'000;
    std::uint64_t seed = 0;
    Execution execution = Execution::Parallel;
    std::uint64_t guard_slices = 10;
    std::uint64_t crash_budget = 1000;
    std::optional<int> offset_mv; // overrides the plan
    bool interpret_poc = false;
};

/// Sets up the platform, applies the plan's offset for the target core and
/// runs runs × tries victim executions. Throws AbortedWithPartial<CampaignResult>.
CampaignResult phase3_attack(const ProcessorProfile& profile, const VoltagePlan& plan,
                             const CampaignOptions& options);

/// Fills mean_per_10k and sigma from per_run.
void summarize(CampaignResult& result);

// Seed purposes, so the phases never share random streams.
namespace purpose {
inline constexpr std::uint64_t kPhase1 = 1;
inline constexpr std::uint64_t kPhase2 = 2;
inline constexpr std::uint64_t kPhase3 = 3;
inline constexpr std::uint64_t kReport = 4;
} // namespace purpose

} // namespace voltlab
