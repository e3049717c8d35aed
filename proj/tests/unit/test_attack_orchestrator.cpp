#include "voltlab/attack_orchestrator.hpp"
#include "voltlab/errors.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>

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

} // namespace

TEST_CASE("system setup") {
    const auto s = setup_system(k7700(), PState(0x1B), 1, stressor_profile("listing2"));
    CHECK(s.state.pstate == PState(0x1B));
    CHECK((s.state.msr_file.at(msr::kMiscPwrMgmt) & 1) == 1);
    CHECK(((s.state.msr_file.at(msr::kPerfCtl) >> 8) & 0xFF) == 0x1B);
    CHECK(s.plan.at(0).msr_address == msr::kMiscPwrMgmt);
    CHECK(s.plan.at(1).msr_address == msr::kPerfCtl);
    CHECK(s.config.interference.all());
    CHECK(s.state.interference.all());
    CHECK(s.config.attack_group == std::vector<int>{0, 4});
    CHECK(s.config.victim_group.size() == 6);
    CHECK(s.state.roles[1] == LogicalRole::Victim);
    CHECK(s.state.roles[5] == LogicalRole::Stressor);
    CHECK(s.state.roles[0] == LogicalRole::Attacker);
    CHECK(std::find(s.config.drivers_disabled.begin(), s.config.drivers_disabled.end(), "intel_pstate") !=
          s.config.drivers_disabled.end());
    CHECK_THROWS_AS(setup_system(k7700(), PState(0x1B), 4, stressor_profile("none")), InvalidCore);
    CHECK_THROWS_AS(setup_system(k7700(), PState(0x30), 1, stressor_profile("none")), UnknownCoreOrPState);
}

TEST_CASE("phase 1 recovers the window tops of every P-state") {
    const auto prog = bundled_program("listing3");
    for (const auto& ps : k7700().pstates) {
        const auto plan = phase1_find_window(k7700(), prog, ps.pstate);
        REQUIRE(plan.cores.size() == 4);
        for (const auto& w : plan.cores) {
            INFO("pstate " << hex(ps.pstate.ratio()) << " core " << w.core);
            CHECK(std::abs(w.window_top_mv - ps.fault_voltage_mv[w.core]) <= 5.0);
            // Never below the instability boundary.
            CHECK(w.window_top_mv > ps.fault_voltage_mv[w.core] - ps.exploit_window_mv);
            CHECK(w.chosen_offset_mv % kVoltageStepMv == 0);
        }
    }
}

TEST_CASE("phase 1 without an exploit window") {
    auto p = k7700();
    for (auto& ps : p.pstates)
        ps.exploit_window_mv = 0;
    Phase1Options o;
    o.cores = std::vector<int>{1};
    CHECK_THROWS_AS(phase1_find_window(p, bundled_program("listing3"), PState(0x1B), o), NoWindowFound);
}

TEST_CASE("phase 2 picks the most fault-prone core") {
    const auto prog = bundled_program("listing3");
    SUBCASE("i7-7700K") {
        const auto plan = phase1_find_window(k7700(), prog, PState(0x1B));
        const auto report = phase2_probe_cores(k7700(), plan, prog, 10000);
        CHECK(report.most_fault_prone == 1);
        for (const auto& st : report.cores)
            for (int b = 0; b < 16; ++b)
                if (st.byte_histogram[b])
                    CHECK(k7700().cores[st.core].byte_affinity[b] > 0);
    }
    SUBCASE("i7-8700K") {
        const auto plan = phase1_find_window(k8700(), prog, PState(0x1B));
        const auto report = phase2_probe_cores(k8700(), plan, prog, 10000);
        CHECK(report.most_fault_prone == 0);
    }
}

TEST_CASE("phase 3 campaigns") {
    const auto prog = bundled_program("listing3");
    SUBCASE("offset zero yields nothing") {
        VoltagePlan plan;
        plan.processor = k7700().model_name;
        plan.pstate = PState(0x1B);
        CampaignOptions o;
        o.victim = Scenario::Hmac32;
        o.target_core = 1;
        o.offset_mv = 0;
        o.runs = 2;
        o.tries_per_run = 2000;
        const auto r = phase3_attack(k7700(), plan, o);
        CHECK(r.successes == 0);
        CHECK(r.tries == 4000);
        CHECK(r.mean_per_10k == 0.0);
    }
    SUBCASE("8700K core 0 on the short payload") {
        Phase1Options p1;
        p1.cores = std::vector<int>{0};
        const auto plan = phase1_find_window(k8700(), prog, PState(0x1B), p1);
        CampaignOptions o;
        o.victim = Scenario::Hmac32;
        o.target_core = 0;
        o.runs = 2;
        o.tries_per_run = 5000;
        const auto r = phase3_attack(k8700(), plan, o);
        CHECK(r.mean_per_10k == doctest::Approx(9621.6).epsilon(0.05));
        CHECK(r.start_temperature_c == 47.0);
        CHECK(r.per_run.size() == 2);
    }
    SUBCASE("7700K core 0 is weak on the short payload") {
        Phase1Options p1;
        p1.cores = std::vector<int>{0};
        const auto plan = phase1_find_window(k7700(), prog, PState(0x1B), p1);
        CampaignOptions o;
        o.victim = Scenario::Hmac32;
        o.target_core = 0;
        o.runs = 5;
        o.tries_per_run = 10000;
        const auto r = phase3_attack(k7700(), plan, o);
        CHECK(r.mean_per_10k == doctest::Approx(24.8).epsilon(0.4));
        CHECK(r.sigma > 0.05 * r.mean_per_10k);
    }
    SUBCASE("off-grid offsets are rejected") {
        VoltagePlan plan;
        plan.pstate = PState(0x1B);
        CampaignOptions o;
        o.offset_mv = -242;
        CHECK_THROWS_AS(phase3_attack(k7700(), plan, o), RangeError);
    }
    SUBCASE("8700K has no PoC calibration") {
        VoltagePlan plan;
        plan.pstate = PState(0x1B);
        CampaignOptions o;
        o.victim = Scenario::Poc;
        o.offset_mv = -250;
        CHECK_THROWS_AS(phase3_attack(k8700(), plan, o), CalibrationError);
    }
}

TEST_CASE("summary statistics") {
    CampaignResult r;
    r.per_run = {{10, 10000, 0}, {30, 10000, 0}};
    summarize(r);
    CHECK(r.tries == 20000);
    CHECK(r.successes == 40);
    CHECK(r.mean_per_10k == doctest::Approx(20.0));
    CHECK(r.sigma == doctest::Approx(10.0));
}
