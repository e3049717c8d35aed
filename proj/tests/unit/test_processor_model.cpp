#include "voltlab/errors.hpp"
#include "voltlab/processor_model.hpp"
#include "voltlab/victim_harness.hpp"

#include <boost/math/distributions/chi_squared.hpp>
#include <doctest.h>

#include <cmath>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

using namespace voltlab;

namespace {

const ProcessorProfile& k7700() {
    static const auto p = load_profile_by_name("i7-7700K");
    return p;
}
const ProcessorProfile& k8700() {
    static const auto p = load_profile_by_name("i7-8700K");
    return p;
}

std::string bundled_text(const char* name) {
    std::ifstream in(bundled_profile_path(name));
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

} // namespace

TEST_CASE("bundled profiles load") {
    CHECK(bundled_profile_names().size() == 3);
    CHECK(k7700().physical_cores == 4);
    CHECK(k7700().logical_cores() == 8);
    std::set<unsigned> ratios;
    for (const auto& ps : k7700().pstates)
        ratios.insert(ps.pstate.ratio());
    CHECK(ratios == std::set<unsigned>{0x08, 0x10, 0x1B, 0x20, 0x24, 0x2A});
    CHECK(k8700().physical_cores == 6);
    CHECK(load_profile_by_name("i7-7700").physical_cores == 4);
    CHECK(k7700().pstate(PState(0x10)).fault_voltage_mv[2] == 580.0);
}

TEST_CASE("profile invariants are enforced") {
    auto text = bundled_text("i7-7700K");
    SUBCASE("multiplicity must sum to one") {
        const auto at = text.find("\"multiplicity\"");
        REQUIRE(at != std::string::npos);
        const auto open = text.find('[', at), close = text.find(']', at);
        text.replace(open, close - open + 1, "[0.5, 0.3, 0.1]");
        CHECK_THROWS_AS(parse_profile(text), InvariantError);
    }
    SUBCASE("malformed JSON") { CHECK_THROWS_AS(parse_profile("{ not json"), SchemaError); }
    SUBCASE("missing field") { CHECK_THROWS_AS(parse_profile("{\"schema_version\": 1}"), SchemaError); }
    SUBCASE("unknown lookups") {
        CHECK_THROWS_AS(k7700().pstate(PState(0x30)), UnknownCoreOrPState);
        CHECK_THROWS_AS(k7700().check_core(4), UnknownCoreOrPState);
        CHECK_THROWS_AS(load_profile_by_name("i9-9900K"), Error);
    }
}

TEST_CASE("voltage classification examples") {
    const auto& p = k7700();
    CHECK(classify_voltage(p, 0, PState(0x08), 0.540, 32) == VoltageRegion::ExploitWindow);
    CHECK(classify_voltage(p, 0, PState(0x08), 0.700, 32) == VoltageRegion::Normal);
    CHECK(classify_voltage(p, 0, PState(0x08), 0.530, 32) == VoltageRegion::Unstable);
    CHECK(classify_voltage(p, 0, PState(0x08), 0.550, 32) == VoltageRegion::CorrectedErrors);
    // Ten degrees warmer moves the window up by 2 mV.
    CHECK(window_top_mv(p, 0, PState(0x08), 42) == doctest::Approx(542.0));
    CHECK_THROWS_AS(classify_voltage(p, 9, PState(0x08), 0.5, 30), UnknownCoreOrPState);
}

TEST_CASE("regions only get worse as voltage drops") {
    std::mt19937_64 gen(42);
    const auto& p = k7700();
    std::uniform_int_distribution<int> core_d(0, 3), ps_d(0, 5);
    std::uniform_real_distribution<double> v_d(0.45, 1.3), t_d(20, 90), dv_d(0, 0.1);
    for (int i = 0; i < 10000; ++i) {
        const int c = core_d(gen);
        const auto ps = p.pstates[ps_d(gen)].pstate;
        const double t = t_d(gen), v = v_d(gen), lower = v - dv_d(gen);
        REQUIRE(static_cast<int>(classify_voltage(p, c, ps, lower, t)) >=
                static_cast<int>(classify_voltage(p, c, ps, v, t)));
    }
}

TEST_CASE("fault probability by region") {
    OperatingPoint op;
    op.core = 1;
    op.pstate = PState(0x1B);
    op.temperature_c = 37;
    op.fault_scale = 0.01;
    const FaultModel m(k7700(), op);
    const double top = m.window_top_mv();
    CHECK(top == doctest::Approx(710.0));
    CHECK(m.fault_probability(top + 20) == 0.0);
    CHECK(m.fault_probability(top + 5) == 0.0);
    CHECK(m.fault_probability(top - 2.5) == doctest::Approx(0.005));
    CHECK(m.fault_probability(top - 5) == doctest::Approx(0.01));
    CHECK(m.crash_probability(top - 2) == 0.0);
    CHECK(m.crash_probability(top - 6) > 0.0);

    const CounterStream rng(1, 1, 0);
    for (std::uint64_t e = 0; e < 1000; ++e) {
        CHECK_FALSE(m.sample_fault(top + 20, rng, e, 0));
        CHECK_FALSE(m.sample_crash(top - 1, rng, e));
    }
}

TEST_CASE("multiplicity histograms match the profile (chi-squared, 99%)") {
    for (const auto* p : {&k7700(), &k8700()}) {
        for (int c = 0; c < p->physical_cores; ++c) {
            const auto& core = p->cores[c];
            std::array<double, 3> counts{};
            const int n = 10000;
            for (int i = 0; i < n; ++i) {
                const CounterStream rng(99, static_cast<std::uint64_t>(c), static_cast<std::uint64_t>(i));
                const auto pat = sample_pattern(core, rng, 0, 0);
                counts[multiplicity_bucket(pat.multiplicity())] += 1;
                for (int b : pat.byte_positions())
                    REQUIRE(core.byte_affinity[b] > 0);
            }
            double chi2 = 0;
            int dof = -1;
            for (int k = 0; k < 3; ++k) {
                if (core.multiplicity[k] == 0) {
                    CHECK(counts[k] == 0);
                    continue;
                }
                const double e = n * core.multiplicity[k];
                chi2 += (counts[k] - e) * (counts[k] - e) / e;
                ++dof;
            }
            if (dof > 0) {
                const boost::math::chi_squared dist(dof);
                INFO(p->model_name << " core " << c << " chi2 " << chi2);
                CHECK(chi2 < boost::math::quantile(dist, 0.99));
            }
        }
    }
}

TEST_CASE("8700K core 3 flips are single-bit and sit in byte 4") {
    const auto& core = k8700().cores[3];
    int single = 0, byte4 = 0;
    const int n = 10000;
    for (int i = 0; i < n; ++i) {
        const CounterStream rng(5, 3, static_cast<std::uint64_t>(i));
        const auto pat = sample_pattern(core, rng, 0, 0);
        single += pat.multiplicity() == 1;
        const auto bytes = pat.byte_positions();
        byte4 += bytes.size() == 1 && bytes[0] == 4;
    }
    CHECK(single >= 0.995 * n);
    CHECK(byte4 >= 0.995 * n);
}

TEST_CASE("flip patterns are distinct sorted bits and round-trip through masks") {
    for (int i = 0; i < 2000; ++i) {
        const CounterStream rng(7, 1, static_cast<std::uint64_t>(i));
        const auto pat = sample_pattern(k8700().cores[1], rng, 3, 11);
        REQUIRE(pat.multiplicity() >= 1);
        for (std::size_t k = 1; k < pat.flipped_bits.size(); ++k)
            REQUIRE(pat.flipped_bits[k - 1] < pat.flipped_bits[k]);
        REQUIRE(BitFlipPattern::from_mask(11, pat.mask()) == pat);
    }
}

TEST_CASE("crash kinds follow the P-state") {
    const auto& p = k7700();
    auto tally = [&](unsigned ratio) {
        OperatingPoint op;
        op.core = 0;
        op.pstate = PState(ratio);
        op.temperature_c = p.pstate(op.pstate).reference_temperature_c;
        const FaultModel m(p, op);
        const double v = m.window_top_mv() - 20;
        std::map<CrashKind, int> n;
        for (std::uint64_t e = 0; e < 200000; ++e)
            if (auto k = m.sample_crash(v, CounterStream(3, 0, 0), e))
                ++n[*k];
        return n;
    };
    auto high = tally(0x2A);
    CHECK(high[CrashKind::HardCrash] > high[CrashKind::KernelException]);
    auto low = tally(0x08);
    CHECK(low[CrashKind::KernelException] > 5 * (low[CrashKind::HardCrash] + low[CrashKind::Freeze]));
}

TEST_CASE("crash probability grows with depth and ratio") {
    const auto& p = k7700();
    OperatingPoint op;
    op.core = 0;
    op.pstate = PState(0x1B);
    op.temperature_c = 37;
    const FaultModel m(p, op);
    const double top = m.window_top_mv();
    // Depth counts from the instability boundary at top - w.
    CHECK(m.crash_probability(top - 5) == doctest::Approx(0.02));
    CHECK(m.crash_probability(top - 10) == doctest::Approx(0.04));
    CHECK(m.crash_probability(top - 10) > m.crash_probability(top - 6));
    op.pstate = PState(0x2A);
    op.temperature_c = 50;
    const FaultModel hot(p, op);
    CHECK(hot.crash_probability(hot.window_top_mv() - 10) == doctest::Approx(0.04 * 0x2A / 0x1B));
}

TEST_CASE("thermal model") {
    const auto& p = k7700();
    auto s = PlatformState::initial(p, PState(0x1B), 0);
    SUBCASE("idle settles at ambient") {
        s = update_temperature(p, s, INFINITY);
        for (double t : s.temperature_c)
            CHECK(t == doctest::Approx(ambient_temperature_c(p, PState(0x1B))));
    }
    SUBCASE("victim with stressor partner is hottest") {
        s.assign(2, LogicalRole::Victim);
        s.assign(2 + 4, LogicalRole::Stressor);
        s.assign(0, LogicalRole::Attacker);
        s.stressor = stressor_profile("listing2");
        s = update_temperature(p, s, INFINITY);
        for (int c = 0; c < 4; ++c)
            if (c != 2)
                CHECK(s.temperature_c[2] > s.temperature_c[c]);
        // Victim plus the best stressor is the reference load.
        CHECK(s.temperature_c[2] == doctest::Approx(37.0));
    }
    SUBCASE("relaxation is first order") {
        s.assign(1, LogicalRole::Victim);
        const double start = s.temperature_c[1];
        const double target = target_temperature_c(p, s, 1);
        const auto after = update_temperature(p, s, p.thermal.time_constant_s);
        CHECK(after.temperature_c[1] == doctest::Approx(target + (start - target) * std::exp(-1.0)));
        CHECK_THROWS_AS(update_temperature(p, s, -1), RangeError);
    }
    SUBCASE("a second victim is rejected") {
        s.assign(1, LogicalRole::Victim);
        CHECK_THROWS_AS(s.assign(2, LogicalRole::Victim), InvariantError);
    }
}

TEST_CASE("simulated MSR backend") {
    const auto& p = k7700();
    auto s = PlatformState::initial(p, PState(0x2A), 0);
    s.apply(plan_pstate_request(PState(0x1B), PStateInterface::Eist));
    CHECK(s.pstate == PState(0x1B));
    s.apply(plan_pstate_request(PState(0x20), PStateInterface::Hwp));
    CHECK(s.pstate == PState(0x20));
    s.set_offset_mv(-100);
    CHECK(s.msr_file.at(msr::kOcMailbox) == 0x80000011F3800000ULL);
    CHECK(s.nominal_mv(p) == doctest::Approx(950.0));
    CHECK(s.nominal_mv(p, false) == doctest::Approx(1050.0));

    SUBCASE("perf ctl is ignored without manual control") {
        auto t = PlatformState::initial(p, PState(0x2A), 0);
        t.apply(MsrWrite{msr::kPerfCtl, 0x1B00, 0xFF00});
        CHECK(t.pstate == PState(0x2A));
    }
}

TEST_CASE("fault-scale calibration inverts the try success probability") {
    const auto& p = k7700();
    for (const auto& cal : p.calibration) {
        if (cal.success_rate == 0)
            continue;
        auto ref = calibration_reference(p, cal);
        const auto n = eligible_stores_per_try(cal.scenario);
        ref.fault_scale = solve_fault_scale(p, ref, cal.success_rate, n);
        const FaultModel m(p, ref);
        CHECK(try_success_probability(m.expected_fault_probability(), n) ==
              doctest::Approx(cal.success_rate).epsilon(1e-6));
    }
    OperatingPoint ref;
    ref.core = 1;
    ref.pstate = PState(0x1B);
    ref.temperature_c = 37;
    CHECK(solve_fault_scale(p, ref, 0.0, 10) == 0.0);
    CHECK_THROWS_AS(solve_fault_scale(p, ref, 0.5, 0), CalibrationError);
    ref.offset_mv = 0; // nominal far above the window
    CHECK_THROWS_AS(solve_fault_scale(p, ref, 0.5, 10), CalibrationError);
}

TEST_CASE("stressor multipliers are ordered") {
    const auto l2 = stressor_profile("listing2_shift_loop");
    const auto tf = stressor_profile("twofish_avx");
    const auto none = stressor_profile("none");
    CHECK(none.fault_multiplier == 1.0);
    CHECK(tf.fault_multiplier > none.fault_multiplier);
    CHECK(l2.fault_multiplier > tf.fault_multiplier);
    CHECK_THROWS_AS(stressor_profile("prime95"), UnknownStressor);
}
