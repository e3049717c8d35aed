#pragma once

// Tables and JSON documents produced by the CLI.

#include "voltlab/attack_orchestrator.hpp"
#include "voltlab/msr_codec.hpp"
#include "voltlab/pattern_scanner.hpp"

#include <json.hpp>

#include <array>
#include <string>
#include <vector>

namespace voltlab {

using ordered_json = nlohmann::ordered_json;

struct FaultSample {
    std::vector<std::array<std::uint64_t, 16>> byte_counts;    // per core, flipped bits per byte
    std::vector<std::array<std::uint64_t, 3>> multiplicity;    // per core, faults with 1, 2, 3+ flips
    std::uint64_t faults_per_core = 0;
};

/// Draws `faults_per_core` faults for every core of the profile.
FaultSample sample_fault_locations(const ProcessorProfile& profile, std::uint64_t faults_per_core,
                                   std::uint64_t seed, Execution execution = Execution::Parallel);

/// core,b0..b15
std::string heatmap_csv(const ProcessorProfile& profile, const FaultSample& sample);
/// processor,core,1bf,2bf,3plus_bf
std::string multiplicity_csv(const ProcessorProfile& profile, const FaultSample& sample);
/// One row per campaign in the layout of the HMAC results table.
std::string campaign_csv(const std::vector<CampaignResult>& results);

ordered_json to_json(const MailboxCommand& cmd, std::uint64_t word);
ordered_json to_json(const std::vector<PatternHit>& hits, const MiniProgram& program);
ordered_json to_json(const VoltagePlan& plan);
ordered_json to_json(const ProbeReport& report);
ordered_json to_json(const CampaignResult& result);
ordered_json to_json(const SystemConfig& config, const std::vector<MsrWrite>& plan);

/// Indented, newline-terminated.
std::string dump(const ordered_json& j);

} // namespace voltlab
