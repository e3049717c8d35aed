#include "voltlab/attack_orchestrator.hpp"
#include "voltlab/reporting.hpp"

#include <doctest.h>

#include <omp.h>

using namespace voltlab;

namespace {

const ProcessorProfile& k7700() {
    static const auto p = load_profile_by_name("i7-7700K");
    return p;
}

VoltagePlan plan_for(int core) {
    Phase1Options o;
    o.cores = std::vector<int>{core};
    return phase1_find_window(k7700(), bundled_program("listing3"), PState(0x1B), o);
}

} // namespace

TEST_CASE("serial and parallel campaigns agree bit for bit") {
    const auto plan = plan_for(1);
    for (auto victim : {Scenario::Poc, Scenario::Hmac32, Scenario::Hmac1k}) {
        CampaignOptions o;
        o.victim = victim;
        o.target_core = 1;
        o.runs = 2;
        o.tries_per_run = victim == Scenario::Hmac1k ? 500 : 2000;
        o.seed = 77;
        o.execution = Execution::Serial;
        const auto serial = phase3_attack(k7700(), plan, o);
        o.execution = Execution::Parallel;
        for (int threads : {1, 2, 4}) {
            omp_set_num_threads(threads);
            CHECK(phase3_attack(k7700(), plan, o) == serial);
        }
    }
}

TEST_CASE("serial and parallel probing agree") {
    const auto plan = phase1_find_window(k7700(), bundled_program("listing3"), PState(0x1B));
    Phase2Options o;
    o.seed = 5;
    o.execution = Execution::Serial;
    const auto a = dump(to_json(phase2_probe_cores(k7700(), plan, bundled_program("listing3"), 3000, o)));
    o.execution = Execution::Parallel;
    omp_set_num_threads(3);
    const auto b = dump(to_json(phase2_probe_cores(k7700(), plan, bundled_program("listing3"), 3000, o)));
    CHECK(a == b);
}

TEST_CASE("different seeds give different draws") {
    const auto plan = plan_for(2);
    CampaignOptions o;
    o.victim = Scenario::Hmac32;
    o.target_core = 2;
    o.runs = 1;
    o.tries_per_run = 5000;
    o.seed = 1;
    const auto a = phase3_attack(k7700(), plan, o);
    o.seed = 2;
    const auto b = phase3_attack(k7700(), plan, o);
    CHECK(a.per_run != b.per_run);
}

TEST_CASE("fault-location reports are reproducible") {
    const auto a = sample_fault_locations(k7700(), 2000, 9, Execution::Serial);
    const auto b = sample_fault_locations(k7700(), 2000, 9, Execution::Parallel);
    CHECK(heatmap_csv(k7700(), a) == heatmap_csv(k7700(), b));
    CHECK(multiplicity_csv(k7700(), a) == multiplicity_csv(k7700(), b));
}
