#include "voltlab/reporting.hpp"

#include "voltlab/rng.hpp"

#include <cstdio>
#include <sstream>

namespace voltlab {

FaultSample sample_fault_locations(const ProcessorProfile& profile, std::uint64_t faults_per_core,
                                   std::uint64_t seed, Execution execution) {
    FaultSample s;
    s.faults_per_core = faults_per_core;
    const auto stream_seed = derive_seed(seed, purpose::kReport);
    for (int c = 0; c < profile.physical_cores; ++c) {
        const auto patterns = map_trials<BitFlipPattern>(faults_per_core, execution, [&](std::size_t i) {
            const CounterStream rng(stream_seed, static_cast<std::uint64_t>(c), i);
            return sample_pattern(profile.cores[c], rng, 0, 0);
        });
        std::array<std::uint64_t, 16> bytes{};
        std::array<std::uint64_t, 3> mult{};
        for (const auto& p : patterns) {
            for (auto bit : p.flipped_bits)
                ++bytes[bit / 8];
            ++mult[multiplicity_bucket(p.multiplicity())];
        }
        s.byte_counts.push_back(bytes);
        s.multiplicity.push_back(mult);
    }
    return s;
}

std::string heatmap_csv(const ProcessorProfile& profile, const FaultSample& sample) {
    std::ostringstream out;
    out << "processor,core";
    for (int b = 0; b < 16; ++b)
        out << ",b" << b;
    out << '\n';
    for (std::size_t c = 0; c < sample.byte_counts.size(); ++c) {
        out << profile.model_name << ',' << c;
        for (auto n : sample.byte_counts[c])
            out << ',' << n;
        out << '\n';
    }
    return out.str();
}

std::string multiplicity_csv(const ProcessorProfile& profile, const FaultSample& sample) {
    std::ostringstream out;
    out << "processor,core,1bf,2bf,3plus_bf\n";
    for (std::size_t c = 0; c < sample.multiplicity.size(); ++c) {
        const auto& m = sample.multiplicity[c];
        out << profile.model_name << ',' << c << ',' << m[0] << ',' << m[1] << ',' << m[2] << '\n';
    }
    return out.str();
}

namespace {

std::string fixed(double v, int digits) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

} // namespace

std::string campaign_csv(const std::vector<CampaignResult>& results) {
    std::ostringstream out;
    out << "processor,core,start_temperature_c,voltage_v,offset_mv,scenario,stressor,mean_per_10k,sigma\n";
    for (const auto& r : results)
        out << r.processor << ',' << r.target_core << ',' << fixed(r.start_temperature_c, 1) << ','
            << fixed(mv_to_volts(r.voltage_mv), 3) << ',' << r.offset_mv << ',' << r.scenario << ',' << r.stressor
            << ',' << fixed(r.mean_per_10k, 1) << ',' << fixed(r.sigma, 1) << '\n';
    return out.str();
}

ordered_json to_json(const MailboxCommand& cmd, std::uint64_t word) {
    ordered_json j;
    j["msr"] = hex(word, 16);
    j["domain"] = to_string(cmd.domain);
    j["command"] = to_string(cmd.command);
    j["mode"] = to_string(cmd.mode);
    if (cmd.mode == VoltageMode::Offset)
        j["offset_mv"] = cmd.offset_mv;
    else
        j["static_units"] = cmd.static_units;
    return j;
}

ordered_json to_json(const std::vector<PatternHit>& hits, const MiniProgram& program) {
    auto arr = ordered_json::array();
    for (const auto& h : hits) {
        ordered_json j;
        j["kind"] = to_string(h.kind);
        j["op_index"] = h.op_index;
        j["store_index"] = h.store_index;
        j["gap"] = h.gap;
        j["op"] = format_insn(program.instructions[h.op_index], &program);
        j["store"] = format_insn(program.instructions[h.store_index], &program);
        arr.push_back(std::move(j));
    }
    return arr;
}

ordered_json to_json(const VoltagePlan& plan) {
    ordered_json j;
    j["processor"] = plan.processor;
    j["pstate"] = hex(plan.pstate.ratio());
    j["step_mv"] = plan.step_mv;
    j["crashes_during_search"] = plan.crashes_during_search;
    auto cores = ordered_json::array();
    for (const auto& c : plan.cores) {
        ordered_json cj;
        cj["core"] = c.core;
        cj["window_top_v"] = mv_to_volts(c.window_top_mv);
        cj["chosen_offset_mv"] = c.chosen_offset_mv;
        cj["levels_tested"] = c.levels_tested;
        cj["crashes"] = c.crashes;
        cj["exceptions"] = c.exceptions;
        cores.push_back(std::move(cj));
    }
    j["cores"] = std::move(cores);
    return j;
}

ordered_json to_json(const ProbeReport& report) {
    ordered_json j;
    j["processor"] = report.processor;
    j["pstate"] = hex(report.pstate.ratio());
    j["most_fault_prone_core"] = report.most_fault_prone;
    auto cores = ordered_json::array();
    for (const auto& s : report.cores) {
        ordered_json cj;
        cj["core"] = s.core;
        cj["offset_mv"] = s.offset_mv;
        cj["tries"] = s.tries;
        cj["faults"] = s.faults;
        cj["fault_rate"] = s.fault_rate;
        cj["crashes"] = s.crashes;
        cj["exceptions"] = s.exceptions;
        cj["byte_histogram"] = s.byte_histogram;
        cj["multiplicity_histogram"] = s.multiplicity_histogram;
        cores.push_back(std::move(cj));
    }
    j["cores"] = std::move(cores);
    return j;
}

ordered_json to_json(const CampaignResult& r) {
    ordered_json j;
    j["processor"] = r.processor;
    j["target_core"] = r.target_core;
    j["scenario"] = r.scenario;
    j["stressor"] = r.stressor;
    j["pstate"] = hex(r.pstate.ratio());
    j["offset_mv"] = r.offset_mv;
    j["voltage_v"] = mv_to_volts(r.voltage_mv);
    j["start_temperature_c"] = r.start_temperature_c;
    j["seed"] = r.seed;
    j["tries"] = r.tries;
    j["successes"] = r.successes;
    j["crashes"] = r.crashes;
    auto runs = ordered_json::array();
    for (const auto& run : r.per_run)
        runs.push_back({{"successes", run.successes}, {"tries", run.tries}, {"crashes", run.crashes}});
    j["per_run"] = std::move(runs);
    j["mean_per_10k"] = r.mean_per_10k;
    j["sigma"] = r.sigma;
    j["aborted"] = r.aborted;
    return j;
}

ordered_json to_json(const SystemConfig& c, const std::vector<MsrWrite>& plan) {
    ordered_json j;
    j["target_core"] = c.target_core;
    j["attack_group"] = c.attack_group;
    j["victim_group"] = c.victim_group;
    j["victim_logical"] = c.victim_logical;
    j["stressor_logical"] = c.stressor_logical;
    j["drivers_disabled"] = c.drivers_disabled;
    j["pstate_pin"] = hex(c.pstate_pin.ratio());
    j["interference_disabled"] = {{"thermal_control_circuit", c.interference.thermal_control_circuit},
                                  {"thermal_interrupt", c.interference.thermal_interrupt},
                                  {"pp0_pp1_limits", c.interference.pp0_pp1_limits},
                                  {"package_limits", c.interference.package_limits}};
    auto writes = ordered_json::array();
    for (const auto& w : plan)
        writes.push_back({{"msr", hex(w.msr_address)}, {"value", hex(w.value)}, {"mask", hex(w.mask)}});
    j["msr_plan"] = std::move(writes);
    return j;
}

std::string dump(const ordered_json& j) { return j.dump(2) + "\n"; }

} // namespace voltlab
