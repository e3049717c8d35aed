#include "voltlab/attack_orchestrator.hpp"

#include "voltlab/errors.hpp"
#include "voltlab/pattern_scanner.hpp"
#include "voltlab/rng.hpp"

#include <algorithm>
#include <cmath>

namespace voltlab {

namespace {

constexpr std::uint64_t kThermInterruptEnables = 0x1808017;
constexpr std::uint64_t kPowerLimitEnableClamp = 0x18000;
constexpr std::uint64_t kPkgLimitEnableClamp = 0x0001800000018000ull;

// Lowest offset on the 5 mV grid the mailbox can express.
constexpr int kOffsetFloorMv = kMinOffsetMv / kVoltageStepMv * kVoltageStepMv;

std::vector<MsrWrite> interference_writes() {
    return {
        {msr::kMiscEnable, 0, 0x8},
        {msr::kThermInterrupt, 0, kThermInterruptEnables},
        {msr::kPackageThermInterrupt, 0, kThermInterruptEnables},
        {msr::kPp0PowerLimit, 0, kPowerLimitEnableClamp},
        {msr::kPp1PowerLimit, 0, kPowerLimitEnableClamp},
        {msr::kPkgPowerLimit, 0, kPkgLimitEnableClamp},
    };
}

PState highest_pstate(const ProcessorProfile& profile) {
    PState best = profile.pstates.front().pstate;
    for (const auto& ps : profile.pstates)
        if (ps.pstate.ratio() > best.ratio())
            best = ps.pstate;
    return best;
}

} // namespace

SystemSetup setup_system(const ProcessorProfile& profile, const PState& pstate, int target_core,
                         const StressorSpec& stressor, std::uint64_t seed) {
    if (target_core < 0 || target_core >= profile.physical_cores)
        throw InvalidCore("core " + std::to_string(target_core) + " does not exist on " + profile.model_name);
    if (profile.physical_cores < 2)
        throw InvalidCore("partitioning needs at least two physical cores");
    profile.pstate(pstate);

    SystemSetup s;
    s.state = PlatformState::initial(profile, highest_pstate(profile), seed);
    s.state.stressor = stressor;
    const int p = profile.physical_cores;
    const int attack_core = target_core == 0 ? 1 : 0;

    auto& cfg = s.config;
    cfg.target_core = target_core;
    cfg.victim_logical = target_core;
    cfg.stressor_logical = target_core + p;
    cfg.attacker_logical = attack_core;
    cfg.attack_group = {attack_core, attack_core + p};
    for (int l = 0; l < profile.logical_cores(); ++l)
        if (s.state.physical_of(l) != attack_core)
            cfg.victim_group.push_back(l);
    cfg.drivers_disabled = {"acpi_cpufreq", "intel_pstate"};
    cfg.pstate_pin = pstate;

    // The attack core's partner stays idle to keep the attack core cool.
    s.state.assign(cfg.attacker_logical, LogicalRole::Attacker);
    s.state.assign(cfg.victim_logical, LogicalRole::Victim);
    if (stressor.kind != StressorKind::None)
        s.state.assign(cfg.stressor_logical, LogicalRole::Stressor);

    s.plan = plan_pstate_request(pstate, PStateInterface::Eist);
    for (const auto& w : interference_writes())
        s.plan.push_back(w);
    s.state.apply(s.plan);
    cfg.interference = s.state.interference;
    s.state = update_temperature(profile, s.state, INFINITY);
    return s;
}

// --- phase 1 ---------------------------------------------------------------

const CoreWindow& VoltagePlan::core(int physical) const {
    for (const auto& c : cores)
        if (c.core == physical)
            return c;
    throw UnknownCoreOrPState("no voltage window for core " + std::to_string(physical));
}

VoltagePlan phase1_find_window(const ProcessorProfile& clone, const MiniProgram& victim, const PState& pstate,
                               const Phase1Options& options) {
    if (options.start_offset_mv % kVoltageStepMv != 0 || options.start_offset_mv > kMaxOffsetMv ||
        options.start_offset_mv < kOffsetFloorMv)
        throw RangeError("start offset must be a multiple of 5 mV inside the mailbox range");
    const auto stressor = stressor_profile(options.stressor);
    const auto seed = derive_seed(options.seed, purpose::kPhase1);
    const auto base_mv = clone.pstate(pstate).base_voltage_mv;

    std::vector<int> cores;
    if (options.cores) {
        cores = *options.cores;
    } else {
        for (int c = 0; c < clone.physical_cores; ++c)
            cores.push_back(c);
    }

    VoltagePlan plan;
    plan.processor = clone.model_name;
    plan.pstate = pstate;
    const auto input = default_machine();
    for (int c : cores) {
        auto setup = setup_system(clone, pstate, c, stressor, options.seed);
        // A clone whose probe rate is unreachable cannot fault at all; the
        // search then runs into the floor and reports no window.
        double scale = 0;
        std::string unreachable;
        try {
            scale = resolve_fault_scale(clone, c, Scenario::Probe, pstate, stressor);
        } catch (const CalibrationError& e) {
            unreachable = std::string(" (") + e.what() + ")";
        }
        CoreWindow w;
        w.core = c;
        bool found = false;
        std::uint64_t level = 0;
        for (int offset = options.start_offset_mv; offset >= kOffsetFloorMv && !found;
             offset -= kVoltageStepMv, ++level) {
            setup.state.set_offset_mv(offset);
            ++w.levels_tested;
            for (int attempt = 0; attempt <= options.max_retries; ++attempt) {
                TestLoopOptions opt;
                opt.core = c;
                opt.fault_scale = scale;
                opt.seed = seed;
                opt.trial = level * 16 + static_cast<std::uint64_t>(attempt);
                const auto r = run_test_loop(clone, setup.state, victim, input, options.max_iters, opt);
                if (r.kind == RunOutcome::Kind::Mismatch) {
                    w.window_top_mv = base_mv + offset;
                    w.chosen_offset_mv = offset;
                    found = true;
                    break;
                }
                if (r.kind == RunOutcome::Kind::Match)
                    break;
                // Crash or processor exception: reboot the clone at this level and try again.
                if (r.kind == RunOutcome::Kind::Crash)
                    ++w.crashes;
                else
                    ++w.exceptions;
            }
        }
        plan.crashes_during_search += w.crashes;
        if (!found)
            throw NoWindowFound("no exploitable voltage window on core " + std::to_string(c) + " of " +
                                clone.model_name + " at P-state " + hex(pstate.ratio()) + unreachable);
        plan.cores.push_back(w);
    }
    return plan;
}

// --- phase 2 ---------------------------------------------------------------

ProbeReport phase2_probe_cores(const ProcessorProfile& profile, const VoltagePlan& plan, const MiniProgram& victim,
                               std::uint64_t tries_per_core, const Phase2Options& options) {
    const auto stressor = stressor_profile(options.stressor);
    const auto seed = derive_seed(options.seed, purpose::kPhase2);
    const auto input = default_machine();

    ProbeReport report;
    report.processor = profile.model_name;
    report.pstate = plan.pstate;
    std::uint64_t crashes = 0;
    for (const auto& cw : plan.cores) {
        auto setup = setup_system(profile, plan.pstate, cw.core, stressor, options.seed);
        setup.state.set_offset_mv(cw.chosen_offset_mv);
        TestLoopOptions opt;
        opt.core = cw.core;
        opt.fault_scale = resolve_fault_scale(profile, cw.core, Scenario::Probe, plan.pstate, stressor);
        opt.seed = seed;

        const auto outcomes = map_trials<RunOutcome>(tries_per_core, options.execution, [&](std::size_t i) {
            auto o = opt;
            o.trial = i;
            return run_test_loop(profile, setup.state, victim, input, 1, o);
        });

        FaultStats st;
        st.core = cw.core;
        st.offset_mv = cw.chosen_offset_mv;
        for (const auto& r : outcomes) {
            ++st.tries;
            switch (r.kind) {
            case RunOutcome::Kind::Match: break;
            case RunOutcome::Kind::Mismatch:
                ++st.faults;
                for (const auto& d : r.diff) {
                    for (auto bit : d.flipped_bits)
                        ++st.byte_histogram[bit / 8];
                    ++st.multiplicity_histogram[multiplicity_bucket(d.multiplicity())];
                }
                break;
            case RunOutcome::Kind::Crash: ++st.crashes; break;
            case RunOutcome::Kind::ProcessorException: ++st.exceptions; break;
            }
            if (r.kind == RunOutcome::Kind::Crash && ++crashes > options.crash_budget) {
                st.fault_rate = static_cast<double>(st.faults) / static_cast<double>(st.tries);
                report.cores.push_back(st);
                throw AbortedWithPartial<ProbeReport>("probing crashed the machine too often", report);
            }
        }
        st.fault_rate = st.tries ? static_cast<double>(st.faults) / static_cast<double>(st.tries) : 0.0;
        report.cores.push_back(st);
    }

    double best = -1;
    for (const auto& st : report.cores)
        if (st.fault_rate > best) {
            best = st.fault_rate;
            report.most_fault_prone = st.core;
        }
    return report;
}

// --- phase 3 ---------------------------------------------------------------

void summarize(CampaignResult& r) {
    r.tries = r.successes = r.crashes = 0;
    std::vector<double> per10k;
    for (const auto& run : r.per_run) {
        r.tries += run.tries;
        r.successes += run.successes;
        r.crashes += run.crashes;
        if (run.tries)
            per10k.push_back(1e4 * static_cast<double>(run.successes) / static_cast<double>(run.tries));
    }
    r.mean_per_10k = r.sigma = 0;
    if (per10k.empty())
        return;
    double sum = 0;
    for (double x : per10k)
        sum += x;
    r.mean_per_10k = sum / static_cast<double>(per10k.size());
    double ss = 0;
    for (double x : per10k)
        ss += (x - r.mean_per_10k) * (x - r.mean_per_10k);
    r.sigma = std::sqrt(ss / static_cast<double>(per10k.size()));
}

CampaignResult phase3_attack(const ProcessorProfile& profile, const VoltagePlan& plan, const CampaignOptions& options) {
    if (options.runs < 1)
        throw RangeError("a campaign needs at least one run");
    const auto stressor = stressor_profile(options.stressor);
    auto setup = setup_system(profile, plan.pstate, options.target_core, stressor, options.seed);
    const int offset = options.offset_mv ? *options.offset_mv : plan.core(options.target_core).chosen_offset_mv;
    if (offset % kVoltageStepMv != 0)
        throw RangeError("offset " + std::to_string(offset) + " mV is not on the 5 mV grid");
    setup.state.set_offset_mv(offset);
    // Campaigns start from a preheated target core when the calibration says so.
    if (const auto* cal = profile.find_calibration(options.target_core, options.victim);
        cal && cal->start_temperature_c)
        setup.state.temperature_c[options.target_core] = *cal->start_temperature_c;

    CampaignResult result;
    result.processor = profile.model_name;
    result.target_core = options.target_core;
    result.scenario = std::string(to_string(options.victim));
    result.stressor = stressor.name;
    result.pstate = plan.pstate;
    result.offset_mv = offset;
    result.voltage_mv = setup.state.nominal_mv(profile);
    result.start_temperature_c = setup.state.temperature_c[options.target_core];
    result.seed = options.seed;
    result.fault_scale = resolve_fault_scale(profile, options.target_core, options.victim, plan.pstate, stressor);

    VictimOptions vo;
    vo.fault_scale = result.fault_scale;
    vo.seed = derive_seed(options.seed, purpose::kPhase3);
    vo.execution = options.execution;
    vo.guard_slices = options.guard_slices;
    vo.interpret_poc = options.interpret_poc;

    std::uint64_t crashes = 0;
    for (int run = 0; run < options.runs; ++run) {
        vo.trial_base = static_cast<std::uint64_t>(run) * options.tries_per_run;
        vo.crash_budget = options.crash_budget - crashes;
        VictimTally t;
        try {
            if (options.victim == Scenario::Poc)
                t = run_poc_enclave(profile, setup.state, options.target_core, options.tries_per_run, vo);
            else if (options.victim == Scenario::Hmac32)
                t = run_hmac_victim(profile, setup.state, options.target_core, kHmacShortPayload,
                                    options.tries_per_run, vo);
            else if (options.victim == Scenario::Hmac1k)
                t = run_hmac_victim(profile, setup.state, options.target_core, kHmacLongPayload,
                                    options.tries_per_run, vo);
            else
                throw RangeError("the probe scenario is not an attack victim");
        } catch (const AbortedWithPartial<VictimTally>& e) {
            const auto& p = e.partial();
            result.per_run.push_back({p.successes, p.tries, p.crashes});
            result.aborted = true;
            summarize(result);
            throw AbortedWithPartial<CampaignResult>(e.what(), result);
        }
        crashes += t.crashes;
        result.per_run.push_back({t.successes, t.tries, t.crashes});
    }
    summarize(result);
    return result;
}

} // namespace voltlab
