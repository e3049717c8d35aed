#include "voltlab/victim_harness.hpp"

#include "voltlab/errors.hpp"
#include "voltlab/pattern_scanner.hpp"

#include <algorithm>
#include <map>
#include <mutex>

namespace voltlab {

// --- stressors and programs ------------------------------------------------

StressorSpec stressor_profile(std::string_view name) {
    if (name == "listing2_shift_loop" || name == "listing2")
        return {StressorKind::Listing2ShiftLoop, "listing2_shift_loop", 10.0, 8.95};
    if (name == "twofish_avx" || name == "twofish")
        return {StressorKind::TwofishAvx, "twofish_avx", 2.0, 1.25};
    if (name == "none")
        return {StressorKind::None, "none", 0.0, 1.0};
    throw UnknownStressor("unknown stressor '" + std::string(name) + "'");
}

std::vector<std::string> stressor_names() { return {"listing2_shift_loop", "twofish_avx", "none"}; }

std::filesystem::path bundled_program_path(std::string_view name) {
    return std::filesystem::path(VOLTLAB_DATA_DIR) / "programs" / (std::string(name) + ".s");
}

MiniProgram bundled_program(std::string_view name) {
    const auto path = bundled_program_path(name);
    if (!std::filesystem::exists(path))
        throw ParseError("no bundled program '" + std::string(name) + "'");
    return load_program(path);
}

std::vector<std::string> bundled_program_names() {
    return {"listing1_xor", "listing1_add", "listing2_stressor", "listing3", "listing4_poc"};
}

// --- calibration -----------------------------------------------------------

namespace {

std::uint64_t eligible_executions(const MiniProgram& program) {
    std::uint64_t n = 0;
    for (const auto& hit : scan(program))
        n += estimate_window(program, hit, 1).duration_slices;
    return n;
}

const MiniProgram& poc_program() {
    static const MiniProgram p = bundled_program("listing4_poc");
    return p;
}

const MiniProgram& probe_program() {
    static const MiniProgram p = bundled_program("listing3");
    return p;
}

} // namespace

std::uint64_t eligible_stores_per_try(Scenario scenario) {
    switch (scenario) {
    case Scenario::Probe: {
        static const std::uint64_t n = eligible_executions(probe_program());
        return n;
    }
    case Scenario::Poc: {
        static const std::uint64_t n = eligible_executions(poc_program());
        return n * kPocIterationsPerTry;
    }
    case Scenario::Hmac32: return hmac_compressions(kHmacShortPayload) * kStoresPerCompression;
    case Scenario::Hmac1k: return hmac_compressions(kHmacLongPayload) * kStoresPerCompression;
    }
    return 0;
}

OperatingPoint calibration_reference(const ProcessorProfile& profile, const CalibrationPoint& point) {
    const auto& ps = profile.pstate(point.pstate);
    profile.check_core(point.core);
    OperatingPoint op;
    op.core = point.core;
    op.pstate = point.pstate;
    op.offset_mv = ps.fault_voltage_mv[point.core] - ps.base_voltage_mv;
    op.temperature_c = point.start_temperature_c.value_or(ps.reference_temperature_c);
    op.noise_mv = profile.voltage_noise_mv;
    return op;
}

double peak_fault_scale(const ProcessorProfile& profile, int core, Scenario scenario) {
    profile.check_core(core);
    const auto& cal = profile.calibration_for(core, scenario);
    if (cal.success_rate == 0)
        return 0.0;
    const double solved =
        solve_fault_scale(profile, calibration_reference(profile, cal), cal.success_rate, eligible_stores_per_try(scenario));
    double divisor = stressor_profile("listing2").fault_multiplier;
    if (is_attack_scenario(scenario))
        divisor *= profile.pstate(cal.pstate).attack_scale;
    if (divisor <= 0)
        throw CalibrationError("calibration P-state " + hex(cal.pstate.ratio()) + " has no attack susceptibility");
    return solved / divisor;
}

double resolve_fault_scale(const ProcessorProfile& profile, int core, Scenario scenario, const PState& pstate,
                           const StressorSpec& stressor) {
    double scale = peak_fault_scale(profile, core, scenario) * stressor.fault_multiplier;
    if (is_attack_scenario(scenario))
        scale *= profile.pstate(pstate).attack_scale;
    return scale;
}

// --- test loop -------------------------------------------------------------

std::string_view to_string(RunOutcome::Kind k) {
    switch (k) {
    case RunOutcome::Kind::Match: return "match";
    case RunOutcome::Kind::Mismatch: return "mismatch";
    case RunOutcome::Kind::Crash: return "crash";
    case RunOutcome::Kind::ProcessorException: return "processor-exception";
    }
    return "?";
}

namespace {

int default_core(const PlatformState& env, const std::optional<int>& core) {
    if (core)
        return *core;
    if (auto v = env.victim_logical())
        return env.physical_of(*v);
    return 0;
}

class LoopObserver : public ExecutionObserver {
public:
    LoopObserver(const FaultModel& model, const CounterStream& rng, const TestLoopOptions& opt, int core)
        : model_(model), rng_(rng), opt_(opt), core_(core) {}

    bool on_slice(std::uint64_t slice, std::size_t) override {
        const auto g = base + slice;
        voltage_ = model_.slice_voltage(rng_, g);
        const auto region = model_.region(voltage_);
        crash = model_.sample_crash(voltage_, rng_, g);
        const auto mce = observe(region, std::nullopt, crash, rng_, g, core_, opt_.mca);
        if (mce.record && opt_.log)
            opt_.log->append(*mce.record);
        if (crash)
            return false;
        if (opt_.decode_errors) {
            if (auto de = occasionally_decode_error(region, rng_, g, core_, opt_.mca)) {
                if (opt_.log)
                    opt_.log->append(de->record);
                if (de->surfaced) {
                    exception = de->surfaced;
                    return false;
                }
            }
        }
        return true;
    }

    void on_eligible_store(std::uint64_t slice, std::size_t, std::uint64_t address, Vec128& value) override {
        if (auto f = model_.sample_fault(voltage_, rng_, base + slice, address / 16)) {
            const auto m = f->mask();
            value[0] ^= m[0];
            value[1] ^= m[1];
        }
    }

    std::uint64_t base = 0;
    std::optional<CrashKind> crash;
    std::optional<ProcessorExceptionKind> exception;

private:
    const FaultModel& model_;
    const CounterStream& rng_;
    const TestLoopOptions& opt_;
    int core_;
    double voltage_ = 0;
};

std::vector<BitFlipPattern> memory_diff(const MachineState& got, const MachineState& want) {
    std::vector<BitFlipPattern> out;
    const auto n = std::min(got.memory.size(), want.memory.size());
    for (std::size_t a = 0; a < n; a += 16) {
        std::array<std::uint64_t, 2> mask{};
        for (std::size_t i = 0; i < 16 && a + i < n; ++i)
            mask[i / 8] |= std::uint64_t(got.memory[a + i] ^ want.memory[a + i]) << (8 * (i % 8));
        if (mask[0] || mask[1])
            out.push_back(BitFlipPattern::from_mask(a / 16, mask));
    }
    return out;
}

} // namespace

RunOutcome run_test_loop(const ProcessorProfile& profile, const PlatformState& env, const MiniProgram& program,
                         const MachineState& input, std::uint64_t max_iters, const TestLoopOptions& options) {
    const int core = default_core(env, options.core);
    MachineState reference = input;
    const auto ref_run = execute(program, reference, nullptr, {}, options.step_budget);
    if (!ref_run.halted)
        throw InterpreterError("test program '" + program.name + "' does not halt");

    const auto model = FaultModel::for_state(profile, env, core, options.fault_scale);
    const auto worst = model.worst_region();
    RunOutcome out;
    if (worst == VoltageRegion::Normal || (worst == VoltageRegion::CorrectedErrors && !options.log)) {
        // Nothing in the noise band can fault, crash or log.
        out.iterations_executed = max_iters;
        out.slices = max_iters * ref_run.steps;
        return out;
    }

    const auto eligible = eligible_store_mask(program);
    const CounterStream rng(options.seed, static_cast<std::uint64_t>(core), options.trial);
    LoopObserver obs(model, rng, options, core);
    for (std::uint64_t it = 0; it < max_iters; ++it) {
        MachineState machine = input;
        const auto r = execute(program, machine, &obs, eligible, options.step_budget);
        obs.base += r.steps;
        out.iterations_executed = it + 1;
        out.slices = obs.base;
        if (obs.crash) {
            out.kind = RunOutcome::Kind::Crash;
            out.crash = obs.crash;
            return out;
        }
        if (obs.exception) {
            out.kind = RunOutcome::Kind::ProcessorException;
            out.exception = obs.exception;
            return out;
        }
        if (!r.halted)
            throw InterpreterError("test program '" + program.name + "' does not halt");
        auto diff = memory_diff(machine, reference);
        if (!diff.empty()) {
            out.kind = RunOutcome::Kind::Mismatch;
            out.diff = std::move(diff);
            return out;
        }
    }
    return out;
}

// --- attack victims --------------------------------------------------------

namespace {

class StoreFaultObserver : public ExecutionObserver {
public:
    StoreFaultObserver(const FaultModel& model, const CounterStream& rng, UndervoltWindow window)
        : model_(model), rng_(rng), window_(window) {}

    bool on_slice(std::uint64_t slice, std::size_t) override {
        const auto g = base + slice;
        voltage_ = model_.slice_voltage(rng_, g, window_.contains(slice));
        crash = model_.sample_crash(voltage_, rng_, g);
        return !crash;
    }
    void on_eligible_store(std::uint64_t slice, std::size_t, std::uint64_t address, Vec128& value) override {
        if (auto f = model_.sample_fault(voltage_, rng_, base + slice, address / 16)) {
            const auto m = f->mask();
            value[0] ^= m[0];
            value[1] ^= m[1];
        }
    }

    std::uint64_t base = 0;
    std::optional<CrashKind> crash;

private:
    const FaultModel& model_;
    const CounterStream& rng_;
    UndervoltWindow window_;
    double voltage_ = 0;
};

class PocVictim {
public:
    PocVictim(const ProcessorProfile& profile, const PlatformState& env, int core, const VictimOptions& opt)
        : model_(FaultModel::for_state(profile, env, core, opt.fault_scale)), opt_(opt), core_(core),
          program_(poc_program()), eligible_(eligible_store_mask(program_)), machine_(default_machine()) {
        const auto hits = scan(program_);
        if (hits.empty())
            throw InvariantError("PoC program has no vulnerable store");
        std::uint64_t first = ~std::uint64_t{0}, last = 0, stores = 0;
        for (const auto& h : hits) {
            const auto w = estimate_window(program_, h, 1);
            if (w.first_slice) {
                first = std::min(first, *w.first_slice);
                last = std::max(last, *w.last_slice);
            }
            stores += w.duration_slices;
        }
        window_ = {first > opt.guard_slices ? first - opt.guard_slices : 0, last + opt.guard_slices};
        recovery_ = program_.labels.at("do_recovery");
        // Without a crash anywhere in the noise band each iteration succeeds
        // independently with the mean per-store probability.
        analytic_ = !opt.interpret_poc && model_.worst_region() != VoltageRegion::Unstable;
        if (analytic_)
            p_try_ = try_success_probability(model_.expected_fault_probability(), stores * opt.poc_iterations);
    }

    TryOutcome run(std::uint64_t trial) const {
        const CounterStream rng(opt_.seed, static_cast<std::uint64_t>(core_), opt_.trial_base + trial);
        if (analytic_)
            return {p_try_ > 0 && rng.uniform(0, lane::kFault) < p_try_, std::nullopt};
        StoreFaultObserver obs(model_, rng, window_);
        for (std::uint64_t it = 0; it < opt_.poc_iterations; ++it) {
            MachineState m = machine_;
            const auto r = execute(program_, m, &obs, eligible_);
            obs.base += r.steps;
            if (obs.crash)
                return {false, obs.crash};
            if (r.halted && r.final_index == static_cast<std::size_t>(recovery_))
                return {true, std::nullopt};
        }
        return {};
    }

private:
    FaultModel model_;
    VictimOptions opt_;
    int core_;
    const MiniProgram& program_;
    std::vector<bool> eligible_;
    MachineState machine_;
    UndervoltWindow window_;
    int recovery_ = 0;
    bool analytic_ = false;
    double p_try_ = 0;
};

class HmacVictim {
public:
    HmacVictim(const ProcessorProfile& profile, const PlatformState& env, int core, std::size_t payload,
               const VictimOptions& opt)
        : model_(FaultModel::for_state(profile, env, core, opt.fault_scale)), opt_(opt), core_(core),
          data_(hmac_victim_data(payload)) {}

    TryOutcome run(std::uint64_t trial) const {
        const CounterStream rng(opt_.seed, static_cast<std::uint64_t>(core_), opt_.trial_base + trial);
        std::optional<CrashKind> crash;
        // Every store of the compression loop is fault-prone, so the whole
        // computation sits inside the undervolting window.
        auto hook = [&](std::uint64_t index, std::array<std::uint32_t, 4>& words) {
            if (crash)
                return;
            const double v = model_.slice_voltage(rng, index);
            if ((crash = model_.sample_crash(v, rng, index)))
                return;
            if (auto f = model_.sample_fault(v, rng, index, index)) {
                const auto m = f->mask();
                for (int i = 0; i < 4; ++i)
                    words[i] ^= static_cast<std::uint32_t>(m[i / 2] >> (32 * (i % 2)));
            }
        };
        const auto run = hmac_sha256(data_.key, data_.message, hook);
        if (crash)
            return {false, crash};
        return {run.mac != data_.expected, std::nullopt};
    }

private:
    FaultModel model_;
    VictimOptions opt_;
    int core_;
    const HmacVictimData& data_;
};

template <typename Victim>
VictimTally run_tries(const Victim& victim, std::uint64_t tries, const VictimOptions& opt) {
    const auto outcomes =
        map_trials<TryOutcome>(tries, opt.execution, [&](std::size_t i) { return victim.run(i); });
    VictimTally t;
    for (const auto& o : outcomes) {
        ++t.tries;
        t.successes += o.success;
        if (o.crash) {
            ++t.crashes;
            t.kernel_exceptions += *o.crash == CrashKind::KernelException;
            if (t.crashes > opt.crash_budget)
                throw AbortedWithPartial<VictimTally>(
                    "victim crashed " + std::to_string(t.crashes) + " times, over the budget of " +
                        std::to_string(opt.crash_budget),
                    t);
        }
    }
    return t;
}

} // namespace

VictimTally run_poc_enclave(const ProcessorProfile& profile, const PlatformState& env, int target_core,
                            std::uint64_t tries, const VictimOptions& options) {
    profile.check_core(target_core);
    return run_tries(PocVictim(profile, env, target_core, options), tries, options);
}

VictimTally run_hmac_victim(const ProcessorProfile& profile, const PlatformState& env, int target_core,
                            std::size_t payload_bytes, std::uint64_t tries, const VictimOptions& options) {
    profile.check_core(target_core);
    return run_tries(HmacVictim(profile, env, target_core, payload_bytes, options), tries, options);
}

TryOutcome poc_try(const ProcessorProfile& profile, const PlatformState& env, int target_core,
                   const VictimOptions& options, std::uint64_t trial) {
    return PocVictim(profile, env, target_core, options).run(trial);
}

TryOutcome hmac_try(const ProcessorProfile& profile, const PlatformState& env, int target_core,
                    std::size_t payload_bytes, const VictimOptions& options, std::uint64_t trial) {
    return HmacVictim(profile, env, target_core, payload_bytes, options).run(trial);
}

const HmacVictimData& hmac_victim_data(std::size_t payload_bytes) {
    static std::mutex mu;
    static std::map<std::size_t, HmacVictimData> cache;
    std::lock_guard lock(mu);
    auto it = cache.find(payload_bytes);
    if (it == cache.end()) {
        HmacVictimData d;
        for (std::size_t i = 0; i < 32; ++i)
            d.key.push_back(static_cast<std::uint8_t>(0xA5 ^ (i * 7 + 3)));
        for (std::size_t i = 0; i < payload_bytes; ++i)
            d.message.push_back(static_cast<std::uint8_t>(i * 31 + 11));
        d.expected = hmac_sha256(d.key, d.message).mac;
        it = cache.emplace(payload_bytes, std::move(d)).first;
    }
    return it->second;
}

} // namespace voltlab
