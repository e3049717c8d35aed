#include "voltlab/processor_model.hpp"

#include "voltlab/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace voltlab {

namespace {

// Bits that enable thermal interrupts in 0x19B / 0x1B2 (high/low threshold,
// PROCHOT, critical temperature, power limit notification).
constexpr std::uint64_t kThermInterruptEnables = 0x1808017;
constexpr std::uint64_t kTccEnable = 0x8;
constexpr std::uint64_t kPowerLimitEnableClamp = 0x18000;
constexpr std::uint64_t kPkgLimitEnableClamp = 0x0001800000018000ull;

constexpr int kMaxFlips = 8;
constexpr int kQuadraturePoints = 8192;

VoltageRegion classify_against(double top, double window, double band, double v) {
    if (v > top + band)
        return VoltageRegion::Normal;
    if (v > top)
        return VoltageRegion::CorrectedErrors;
    if (v > top - window)
        return VoltageRegion::ExploitWindow;
    return VoltageRegion::Unstable;
}

double units_to_mv(std::uint32_t units) { return units * 1000.0 / 1024.0; }

} // namespace

std::string_view to_string(Scenario s) {
    switch (s) {
    case Scenario::Probe: return "probe";
    case Scenario::Poc: return "poc";
    case Scenario::Hmac32: return "hmac32";
    case Scenario::Hmac1k: return "hmac1k";
    }
    return "?";
}

Scenario parse_scenario(std::string_view name) {
    if (name == "probe") return Scenario::Probe;
    if (name == "poc") return Scenario::Poc;
    if (name == "hmac32") return Scenario::Hmac32;
    if (name == "hmac1k") return Scenario::Hmac1k;
    throw FormatError("unknown scenario '" + std::string(name) + "'");
}

std::string_view to_string(VoltageRegion r) {
    switch (r) {
    case VoltageRegion::Normal: return "normal";
    case VoltageRegion::CorrectedErrors: return "corrected-errors";
    case VoltageRegion::ExploitWindow: return "exploit-window";
    case VoltageRegion::Unstable: return "unstable";
    }
    return "?";
}

std::string_view to_string(LogicalRole r) {
    switch (r) {
    case LogicalRole::Idle: return "idle";
    case LogicalRole::Attacker: return "attacker";
    case LogicalRole::Victim: return "victim";
    case LogicalRole::Stressor: return "stressor";
    }
    return "?";
}

std::string_view to_string(CrashKind k) {
    switch (k) {
    case CrashKind::Freeze: return "freeze";
    case CrashKind::HardCrash: return "hard-crash";
    case CrashKind::KernelException: return "kernel-exception";
    }
    return "?";
}

// --- regions ---------------------------------------------------------------

double window_top_mv(const ProcessorProfile& profile, int core, const PState& pstate, double temperature_c) {
    profile.check_core(core);
    const auto& ps = profile.pstate(pstate);
    return ps.fault_voltage_mv[core] +
           profile.temperature_coefficient_mv_per_c * (temperature_c - ps.reference_temperature_c);
}

VoltageRegion classify_voltage_mv(const ProcessorProfile& profile, int core, const PState& pstate, double voltage_mv,
                                  double temperature_c) {
    const double top = window_top_mv(profile, core, pstate, temperature_c);
    const auto& ps = profile.pstate(pstate);
    return classify_against(top, ps.exploit_window_mv, ps.corrected_band_mv, voltage_mv);
}

VoltageRegion classify_voltage(const ProcessorProfile& profile, int core, const PState& pstate, double voltage_v,
                               double temperature_c) {
    return classify_voltage_mv(profile, core, pstate, volts_to_mv(voltage_v), temperature_c);
}

// --- platform state --------------------------------------------------------

PlatformState PlatformState::initial(const ProcessorProfile& profile, const PState& pstate, std::uint64_t seed) {
    profile.pstate(pstate);
    PlatformState s;
    s.pstate = pstate;
    s.physical_cores = profile.physical_cores;
    s.roles.assign(profile.logical_cores(), LogicalRole::Idle);
    s.temperature_c.assign(profile.physical_cores, ambient_temperature_c(profile, pstate));
    s.rng_seed = seed;
    s.noise_amplitude_mv = profile.voltage_noise_mv;
    s.msr_file = {
        {msr::kMiscEnable, kTccEnable},
        {msr::kThermInterrupt, 0x3},
        {msr::kPackageThermInterrupt, 0x3},
        {msr::kPp0PowerLimit, 0x8000},
        {msr::kPp1PowerLimit, 0x8000},
        {msr::kPkgPowerLimit, 0x0001800000018000ull},
        {msr::kMiscPwrMgmt, 0x0},
        {msr::kPerfCtl, static_cast<std::uint64_t>(pstate.ratio()) << 8},
    };
    return s;
}

void PlatformState::assign(int logical, LogicalRole role) {
    if (logical < 0 || logical >= static_cast<int>(roles.size()))
        throw InvalidCore("logical core " + std::to_string(logical) + " does not exist");
    if (role == LogicalRole::Victim) {
        auto current = victim_logical();
        if (current && *current != logical)
            throw InvariantError("logical core " + std::to_string(*current) + " is already the victim");
    }
    roles[logical] = role;
}

std::optional<int> PlatformState::victim_logical() const {
    for (std::size_t i = 0; i < roles.size(); ++i)
        if (roles[i] == LogicalRole::Victim)
            return static_cast<int>(i);
    return std::nullopt;
}

double PlatformState::nominal_mv(const ProcessorProfile& profile, bool undervolted) const {
    const double base = profile.pstate(pstate).base_voltage_mv;
    if (!undervolted)
        return base;
    const auto cores = static_cast<std::size_t>(Domain::Cores);
    if (static_units[cores])
        return units_to_mv(*static_units[cores]);
    return base + applied_offset_mv[cores];
}

void PlatformState::set_offset_mv(int mv) {
    apply(mailbox_write(MailboxCommand::offset(Domain::Cores, mv)));
}

void PlatformState::apply(const MsrWrite& write) {
    auto& reg = msr_file[write.msr_address];
    reg = (reg & ~write.mask) | (write.value & write.mask);

    switch (write.msr_address) {
    case msr::kOcMailbox: {
        const auto cmd = decode_mailbox(reg);
        if (cmd.command != MailboxOp::WriteVoltage)
            break;
        const auto d = static_cast<std::size_t>(cmd.domain);
        if (cmd.mode == VoltageMode::Offset) {
            applied_offset_mv[d] = cmd.offset_mv;
            static_units[d].reset();
        } else {
            static_units[d] = cmd.static_units;
        }
        break;
    }
    case msr::kPerfCtl:
        if (msr_file[msr::kMiscPwrMgmt] & 0x1)
            pstate = PState(static_cast<unsigned>((reg >> 8) & 0xFF), pstate.base_clock_mhz());
        break;
    case msr::kHwpRequest:
        pstate = PState(static_cast<unsigned>((reg >> 16) & 0xFF), pstate.base_clock_mhz());
        break;
    default:
        break;
    }

    interference.thermal_control_circuit = (msr_file[msr::kMiscEnable] & kTccEnable) == 0;
    interference.thermal_interrupt = (msr_file[msr::kThermInterrupt] & kThermInterruptEnables) == 0 &&
                                     (msr_file[msr::kPackageThermInterrupt] & kThermInterruptEnables) == 0;
    interference.pp0_pp1_limits = (msr_file[msr::kPp0PowerLimit] & kPowerLimitEnableClamp) == 0 &&
                                  (msr_file[msr::kPp1PowerLimit] & kPowerLimitEnableClamp) == 0;
    interference.package_limits = (msr_file[msr::kPkgPowerLimit] & kPkgLimitEnableClamp) == 0;
}

void PlatformState::apply(const std::vector<MsrWrite>& writes) {
    for (const auto& w : writes)
        apply(w);
}

// --- thermal ---------------------------------------------------------------

double ambient_temperature_c(const ProcessorProfile& profile, const PState& pstate) {
    return profile.pstate(pstate).reference_temperature_c - profile.thermal.reference_load_c;
}

double target_temperature_c(const ProcessorProfile& profile, const PlatformState& state, int physical_core) {
    double t = ambient_temperature_c(profile, state.pstate);
    for (std::size_t l = 0; l < state.roles.size(); ++l) {
        if (state.physical_of(static_cast<int>(l)) != physical_core)
            continue;
        switch (state.roles[l]) {
        case LogicalRole::Idle: break;
        case LogicalRole::Attacker: t += profile.thermal.attacker_rise_c; break;
        case LogicalRole::Victim: t += profile.thermal.victim_rise_c; break;
        case LogicalRole::Stressor: t += state.stressor.temperature_boost_c; break;
        }
    }
    return t;
}

PlatformState update_temperature(const ProcessorProfile& profile, PlatformState state, double dt_s) {
    if (dt_s < 0 || std::isnan(dt_s))
        throw RangeError("time step must be nonnegative");
    const double alpha = std::isinf(dt_s) ? 1.0 : -std::expm1(-dt_s / profile.thermal.time_constant_s);
    for (int c = 0; c < state.physical_cores; ++c) {
        const double target = target_temperature_c(profile, state, c);
        state.temperature_c[c] = alpha == 1.0 ? target : state.temperature_c[c] + alpha * (target - state.temperature_c[c]);
    }
    return state;
}

// --- bit-flip patterns -----------------------------------------------------

std::vector<int> BitFlipPattern::byte_positions() const {
    std::vector<int> out;
    for (auto b : flipped_bits)
        if (out.empty() || out.back() != b / 8)
            out.push_back(b / 8);
    return out;
}

std::array<std::uint64_t, 2> BitFlipPattern::mask() const {
    std::array<std::uint64_t, 2> m{};
    for (auto b : flipped_bits)
        m[b / 64] |= std::uint64_t{1} << (b % 64);
    return m;
}

BitFlipPattern BitFlipPattern::from_mask(std::uint64_t word_index, const std::array<std::uint64_t, 2>& mask) {
    BitFlipPattern p;
    p.word_index = word_index;
    for (int b = 0; b < kWordBits; ++b)
        if ((mask[b / 64] >> (b % 64)) & 1)
            p.flipped_bits.push_back(static_cast<std::uint8_t>(b));
    return p;
}

BitFlipPattern sample_pattern(const CoreProfile& core, const CounterStream& rng, std::uint64_t event,
                              std::uint64_t word_index) {
    const double u = rng.uniform(event, lane::kMultiplicity);
    int count = 1;
    if (u >= core.multiplicity[0] + core.multiplicity[1])
        count = 3;
    else if (u >= core.multiplicity[0])
        count = 2;
    if (count == 3) {
        // 3+ flips: geometric tail with ratio 1/2.
        for (std::uint64_t k = 0; count < kMaxFlips && rng.uniform(event, lane::kPatternBase + 1000 + k) < 0.5; ++k)
            ++count;
    }

    double total = 0;
    for (double w : core.byte_affinity)
        total += w;

    std::array<std::uint64_t, 2> mask{};
    int have = 0;
    for (std::uint64_t draw = 0; have < count; ++draw) {
        double pick = rng.uniform(event, lane::kPatternBase + 2 * draw) * total;
        int byte = kWordBytes - 1;
        for (int i = 0; i < kWordBytes; ++i) {
            if (core.byte_affinity[i] <= 0)
                continue;
            if (pick < core.byte_affinity[i]) {
                byte = i;
                break;
            }
            pick -= core.byte_affinity[i];
        }
        // Rounding can leave `pick` just past the last weight; fall back to the last supported byte.
        while (core.byte_affinity[byte] <= 0)
            --byte;
        const int bit = byte * 8 + static_cast<int>(rng.uniform(event, lane::kPatternBase + 2 * draw + 1) * 8);
        auto& w = mask[bit / 64];
        const auto m = std::uint64_t{1} << (bit % 64);
        if (!(w & m)) {
            w |= m;
            ++have;
        }
    }
    return BitFlipPattern::from_mask(word_index, mask);
}

// --- fault model -----------------------------------------------------------

FaultModel::FaultModel(const ProcessorProfile& profile, const OperatingPoint& op) : profile_(&profile), op_(op) {
    profile.check_core(op.core);
    const auto& ps = profile.pstate(op.pstate);
    core_ = &profile.cores[op.core];
    base_mv_ = ps.base_voltage_mv;
    nominal_mv_ = op.static_mv ? *op.static_mv : base_mv_ + op.offset_mv;
    top_mv_ = voltlab::window_top_mv(profile, op.core, op.pstate, op.temperature_c);
    window_mv_ = ps.exploit_window_mv;
    band_mv_ = ps.corrected_band_mv;
    scale_ = op.fault_scale;
}

FaultModel FaultModel::for_state(const ProcessorProfile& profile, const PlatformState& state, int core,
                                 double fault_scale) {
    OperatingPoint op;
    op.core = core;
    op.pstate = state.pstate;
    const auto cores = static_cast<std::size_t>(Domain::Cores);
    op.offset_mv = state.applied_offset_mv[cores];
    if (state.static_units[cores])
        op.static_mv = units_to_mv(*state.static_units[cores]);
    profile.check_core(core);
    op.temperature_c = state.temperature_c.at(core);
    op.noise_mv = state.noise_amplitude_mv;
    op.fault_scale = fault_scale;
    return FaultModel(profile, op);
}

VoltageRegion FaultModel::region(double voltage_mv) const {
    return classify_against(top_mv_, window_mv_, band_mv_, voltage_mv);
}

double FaultModel::slice_voltage(const CounterStream& rng, std::uint64_t event, bool undervolted) const {
    const double v = nominal_mv(undervolted);
    if (op_.noise_mv <= 0)
        return v;
    return rng.uniform(event, lane::kNoise, v - op_.noise_mv, v + op_.noise_mv);
}

double FaultModel::fault_probability(double voltage_mv) const {
    if (window_mv_ <= 0 || voltage_mv >= top_mv_)
        return 0.0;
    const double depth = std::min(1.0, (top_mv_ - voltage_mv) / window_mv_);
    return std::min(1.0, scale_ * profile_->response(depth));
}

double FaultModel::crash_probability(double voltage_mv) const {
    const double floor = top_mv_ - window_mv_;
    if (voltage_mv > floor)
        return 0.0;
    const double unit = window_mv_ > 0 ? window_mv_ : static_cast<double>(kVoltageStepMv);
    const double p = profile_->crash.base_rate * (1.0 + (floor - voltage_mv) / unit) *
                     (op_.pstate.ratio() / profile_->crash.reference_ratio);
    return std::min(1.0, p);
}

VoltageRegion FaultModel::worst_region(bool undervolted) const {
    return region(nominal_mv(undervolted) - op_.noise_mv);
}

std::optional<BitFlipPattern> FaultModel::sample_fault(double voltage_mv, const CounterStream& rng,
                                                       std::uint64_t event, std::uint64_t word_index) const {
    const double p = fault_probability(voltage_mv);
    if (p <= 0 || rng.uniform(event, lane::kFault) >= p)
        return std::nullopt;
    return sample_pattern(*core_, rng, event, word_index);
}

std::optional<CrashKind> FaultModel::sample_crash(double voltage_mv, const CounterStream& rng,
                                                  std::uint64_t event) const {
    const double p = crash_probability(voltage_mv);
    if (p <= 0 || rng.uniform(event, lane::kCrash) >= p)
        return std::nullopt;
    const double r = op_.pstate.ratio() / 32.0;
    const double hard = r * r;
    const double freeze = 0.25 * hard;
    const double kernel = 1.0;
    const double u = rng.uniform(event, lane::kCrashKind) * (hard + freeze + kernel);
    if (u < hard)
        return CrashKind::HardCrash;
    if (u < hard + freeze)
        return CrashKind::Freeze;
    return CrashKind::KernelException;
}

namespace {

template <typename F>
double mean_over_noise(double nominal, double noise, F&& f) {
    if (noise <= 0)
        return f(nominal);
    double sum = 0;
    const double step = 2 * noise / kQuadraturePoints;
    for (int i = 0; i < kQuadraturePoints; ++i)
        sum += f(nominal - noise + (i + 0.5) * step);
    return sum / kQuadraturePoints;
}

} // namespace

double FaultModel::expected_fault_probability() const {
    return mean_over_noise(nominal_mv_, op_.noise_mv, [&](double v) { return fault_probability(v); });
}

double FaultModel::fault_ceiling() const {
    return mean_over_noise(nominal_mv_, op_.noise_mv, [&](double v) {
        if (window_mv_ <= 0 || v >= top_mv_)
            return 0.0;
        return profile_->response(std::min(1.0, (top_mv_ - v) / window_mv_)) > 0 ? 1.0 : 0.0;
    });
}

// --- free-function forms ---------------------------------------------------

std::optional<BitFlipPattern> sample_fault(const ProcessorProfile& profile, const PlatformState& state, int core,
                                           const EligibleStoreEvent& event, const CounterStream& rng) {
    const auto model = FaultModel::for_state(profile, state, core, event.fault_scale);
    const double v = model.slice_voltage(rng, event.slice);
    return model.sample_fault(v, rng, event.slice, event.word_index);
}

std::optional<CrashKind> sample_crash(const ProcessorProfile& profile, const PlatformState& state,
                                      const CounterStream& rng, std::uint64_t slice) {
    int core = 0;
    if (auto victim = state.victim_logical()) {
        core = state.physical_of(*victim);
    } else {
        // No victim placed: the first core to become unstable decides.
        double highest = -std::numeric_limits<double>::infinity();
        for (int c = 0; c < profile.physical_cores; ++c) {
            const double top = window_top_mv(profile, c, state.pstate, state.temperature_c.at(c));
            if (top > highest) {
                highest = top;
                core = c;
            }
        }
    }
    const auto model = FaultModel::for_state(profile, state, core, 0.0);
    return model.sample_crash(model.slice_voltage(rng, slice), rng, slice);
}

double try_success_probability(double per_store, std::uint64_t eligible_per_try) {
    if (per_store >= 1.0)
        return eligible_per_try > 0 ? 1.0 : 0.0;
    return -std::expm1(static_cast<double>(eligible_per_try) * std::log1p(-per_store));
}

double solve_fault_scale(const ProcessorProfile& profile, OperatingPoint reference, double target_rate,
                         std::uint64_t eligible_per_try) {
    if (target_rate < 0 || target_rate >= 1)
        throw CalibrationError("target success rate must lie in [0, 1)");
    if (target_rate == 0)
        return 0.0;
    if (eligible_per_try == 0)
        throw CalibrationError("victim has no eligible stores to fault");

    const double target = -std::expm1(std::log1p(-target_rate) / static_cast<double>(eligible_per_try));
    auto mean_at = [&](double scale) {
        reference.fault_scale = scale;
        return FaultModel(profile, reference).expected_fault_probability();
    };
    reference.fault_scale = 1.0;
    const double ceiling = FaultModel(profile, reference).fault_ceiling();
    if (target >= ceiling)
        throw CalibrationError("success rate " + std::to_string(target_rate) +
                               " is out of reach at the reference operating point");

    double lo = 0.0, hi = 1.0;
    while (mean_at(hi) < target) {
        lo = hi;
        hi *= 2;
        if (hi > 1e18)
            throw CalibrationError("fault scale diverged");
    }
    for (int i = 0; i < 100 && hi - lo > 1e-15 * hi; ++i) {
        const double mid = 0.5 * (lo + hi);
        (mean_at(mid) < target ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

} // namespace voltlab
