// Prints one PASS/FAIL line per acceptance criterion; exits nonzero if any fails.

#include "oracles.hpp"

#include "voltlab/attack_orchestrator.hpp"
#include "voltlab/errors.hpp"
#include "voltlab/mca_model.hpp"
#include "voltlab/msr_codec.hpp"
#include "voltlab/pattern_scanner.hpp"
#include "voltlab/reporting.hpp"
#include "voltlab/sha256.hpp"
#include "voltlab/victim_harness.hpp"

#include <boost/math/distributions/chi_squared.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>

using namespace voltlab;

namespace {

struct Check {
    std::string detail;
    bool ok = true;

    void expect(bool cond, const std::string& what) {
        if (!cond && ok) {
            ok = false;
            detail = what;
        }
    }
};

const ProcessorProfile& profile(const char* name) {
    static std::map<std::string, ProcessorProfile> cache;
    auto it = cache.find(name);
    if (it == cache.end())
        it = cache.emplace(name, load_profile_by_name(name)).first;
    return it->second;
}

std::string fmt(double v, int digits = 1) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

// 1 ------------------------------------------------------------------------
Check codec() {
    Check c;
    const auto cmd = MailboxCommand::offset(Domain::Cores, -100);
    c.expect(encode_mailbox(cmd) == 0x80000011F3800000ULL, "worked example encodes wrongly");
    c.expect(decode_mailbox(0x80000011F3800000ULL) == cmd, "worked example decodes wrongly");
    for (int mv = kMinOffsetMv; mv <= kMaxOffsetMv; ++mv) {
        const auto m = MailboxCommand::offset(Domain::Cores, mv);
        const auto w = encode_mailbox(m);
        c.expect(w == oracle::mailbox_word(0, 0x11, false, mv, 0) && decode_mailbox(w) == m,
                 "offset " + std::to_string(mv) + " does not round-trip");
    }
    for (std::uint32_t u = 0; u <= kMaxStaticUnits; ++u) {
        const auto m = MailboxCommand::fixed(Domain::Cores, u);
        const auto w = encode_mailbox(m);
        c.expect(w == oracle::mailbox_word(0, 0x11, true, 0, u) && decode_mailbox(w) == m,
                 "static " + std::to_string(u) + " does not round-trip");
    }
    c.detail = c.ok ? "-100 mV -> 0x80000011f3800000; 2048 offsets and 2048 static values round-trip" : c.detail;
    return c;
}

// 2 ------------------------------------------------------------------------
Check pstates() {
    Check c;
    const std::pair<unsigned, unsigned> cases[] = {{0x20, 3200}, {0x1B, 2700}, {0x08, 800}, {0x24, 3600}};
    std::string d;
    for (auto [ratio, mhz] : cases) {
        const auto f = pstate_frequency(PState(ratio));
        c.expect(f == mhz, hex(ratio) + " gives " + std::to_string(f) + " MHz");
        d += hex(ratio) + "=" + std::to_string(f) + " ";
    }
    if (c.ok)
        c.detail = d + "MHz";
    return c;
}

// 3 ------------------------------------------------------------------------
Check window_search() {
    Check c;
    const auto& p = profile("i7-7700K");
    const auto prog = bundled_program("listing3");
    double worst = 0;
    for (const auto& ps : p.pstates) {
        const auto plan = phase1_find_window(p, prog, ps.pstate);
        for (const auto& w : plan.cores) {
            const double err = std::abs(w.window_top_mv - ps.fault_voltage_mv[w.core]);
            worst = std::max(worst, err);
            c.expect(err <= 5.0, "core " + std::to_string(w.core) + " @ " + hex(ps.pstate.ratio()) + ": " +
                                     fmt(mv_to_volts(w.window_top_mv), 3) + " V vs " +
                                     fmt(mv_to_volts(ps.fault_voltage_mv[w.core]), 3) + " V");
        }
    }
    if (c.ok)
        c.detail = "24 windows, max deviation " + fmt(worst, 1) + " mV";
    return c;
}

// 4 ------------------------------------------------------------------------
Check hmac_campaigns() {
    Check c;
    struct Cell {
        const char* model;
        int core;
        Scenario victim;
        double expected;
    };
    const Cell cells[] = {{"i7-8700K", 0, Scenario::Hmac32, 9621.6},
                          {"i7-7700K", 1, Scenario::Hmac32, 1795.6},
                          {"i7-7700K", 1, Scenario::Hmac1k, 1983.8},
                          {"i7-8700K", 3, Scenario::Hmac32, 0.0}};
    std::string d;
    for (const auto& cell : cells) {
        const auto& p = profile(cell.model);
        Phase1Options p1;
        p1.cores = std::vector<int>{cell.core};
        p1.seed = 2024;
        const auto plan = phase1_find_window(p, bundled_program("listing3"), PState(0x1B), p1);
        CampaignOptions o;
        o.victim = cell.victim;
        o.target_core = cell.core;
        o.runs = 5;
        o.tries_per_run = 10000;
        o.seed = 2024;
        const auto r = phase3_attack(p, plan, o);
        const double q = cell.expected / 1e4;
        const double binom = 1e4 * std::sqrt(q * (1 - q) / static_cast<double>(r.tries));
        const double tol = std::max(0.05 * cell.expected, 3 * binom);
        c.expect(std::abs(r.mean_per_10k - cell.expected) <= tol,
                 std::string(cell.model) + " core " + std::to_string(cell.core) + " " +
                     std::string(to_string(cell.victim)) + ": " + fmt(r.mean_per_10k) + " vs " +
                     fmt(cell.expected));
        d += std::string(cell.model) + "/" + std::to_string(cell.core) + "/" + std::string(to_string(cell.victim)) +
             "=" + fmt(r.mean_per_10k) + " ";
    }
    if (c.ok)
        c.detail = d;
    return c;
}

// 5 ------------------------------------------------------------------------
Check poc_campaigns() {
    Check c;
    const auto& p = profile("i7-7700K");
    std::string d;
    auto rate = [&](int core, const char* stressor) {
        Phase1Options p1;
        p1.cores = std::vector<int>{core};
        p1.seed = 6;
        const auto plan = phase1_find_window(p, bundled_program("listing3"), PState(0x1B), p1);
        CampaignOptions o;
        o.victim = Scenario::Poc;
        o.target_core = core;
        o.stressor = stressor;
        o.runs = 5;
        o.tries_per_run = 20000;
        o.seed = 6;
        return phase3_attack(p, plan, o).mean_per_10k / 100.0;
    };
    const std::pair<int, double> listing2[] = {{1, 99.0}, {2, 96.0}, {3, 99.0}};
    for (auto [core, expected] : listing2) {
        const double got = rate(core, "listing2");
        c.expect(std::abs(got - expected) <= 2.0, "core " + std::to_string(core) + " listing2: " + fmt(got) + "%");
        d += "core" + std::to_string(core) + "=" + fmt(got) + "% ";
    }
    const double tf = rate(1, "twofish");
    c.expect(tf <= 8.0 + 2.0 && tf >= 8.0 - 2.0, "core 1 twofish: " + fmt(tf) + "%");
    d += "twofish core1=" + fmt(tf) + "%";
    if (c.ok)
        c.detail = d;
    return c;
}

// 6 ------------------------------------------------------------------------
Check fault_locations() {
    Check c;
    int cores = 0;
    for (const char* model : {"i7-7700", "i7-7700K", "i7-8700K"}) {
        const auto& p = profile(model);
        const auto sample = sample_fault_locations(p, 10000, 31);
        for (int core = 0; core < p.physical_cores; ++core, ++cores) {
            const auto& m = sample.multiplicity[core];
            const auto& want = p.cores[core].multiplicity;
            double chi2 = 0;
            int dof = -1;
            for (int k = 0; k < 3; ++k) {
                if (want[k] == 0) {
                    c.expect(m[k] == 0, std::string(model) + " core " + std::to_string(core) +
                                            " shows an impossible multiplicity");
                    continue;
                }
                const double e = 1e4 * want[k];
                chi2 += (static_cast<double>(m[k]) - e) * (static_cast<double>(m[k]) - e) / e;
                ++dof;
            }
            if (dof > 0)
                c.expect(chi2 < boost::math::quantile(boost::math::chi_squared(dof), 0.99),
                         std::string(model) + " core " + std::to_string(core) + " chi2 " + fmt(chi2, 2));
            for (int b = 0; b < 16; ++b)
                c.expect(sample.byte_counts[core][b] == 0 || p.cores[core].byte_affinity[b] > 0,
                         std::string(model) + " core " + std::to_string(core) + " flips outside its affinity");
        }
    }
    const auto s = sample_fault_locations(profile("i7-8700K"), 10000, 32);
    const double single = static_cast<double>(s.multiplicity[3][0]) / 1e4;
    c.expect(single >= 0.995, "8700K core 3 single-bit share " + fmt(100 * single, 2) + "%");
    if (c.ok)
        c.detail = std::to_string(cores) + " cores pass chi2 @99% and affinity support; 8700K core 3 " +
                   fmt(100 * single, 2) + "% single-bit";
    return c;
}

// 7 ------------------------------------------------------------------------
Check regions_mca() {
    Check c;
    const auto& p = profile("i7-7700K");
    std::mt19937_64 gen(7);
    std::uniform_int_distribution<int> core_d(0, 3), ps_d(0, 5);
    std::uniform_real_distribution<double> v_d(0.45, 1.3), t_d(20, 90), dv_d(0, 0.1);
    for (int i = 0; i < 10000; ++i) {
        const int core = core_d(gen);
        const auto ps = p.pstates[ps_d(gen)].pstate;
        const double t = t_d(gen), v = v_d(gen), lower = v - dv_d(gen);
        c.expect(classify_voltage(p, core, ps, lower, t) >= classify_voltage(p, core, ps, v, t),
                 "region improved as voltage dropped");
    }

    const CounterStream rng(7, 0, 0);
    for (std::uint64_t s = 0; s < 100000; ++s) {
        const auto pat = sample_pattern(p.cores[s % 4], rng, s, 0);
        c.expect(observe(VoltageRegion::ExploitWindow, pat, std::nullopt, rng, s, 0).silent(),
                 "an exploit-window flip produced an MCA record");
    }

    MceLog log;
    const auto fatal = observe(VoltageRegion::Unstable, std::nullopt, CrashKind::KernelException, rng, 1, 2);
    c.expect(fatal.record.has_value(), "kernel exception left no record");
    if (fatal.record)
        log.append(*fatal.record);
    for (int core = 0; core < p.physical_cores; ++core)
        c.expect(log.view(core).size() == 1 && log.view(core)[0].kind == MceKind::UncorrectedFatal,
                 "core " + std::to_string(core) + " did not see the broadcast");

    VoltagePlan plan;
    plan.processor = p.model_name;
    plan.pstate = PState(0x1B);
    for (auto victim : {Scenario::Poc, Scenario::Hmac32, Scenario::Hmac1k}) {
        CampaignOptions o;
        o.victim = victim;
        o.target_core = 1;
        o.offset_mv = 0;
        o.runs = 2;
        o.tries_per_run = 2000;
        const auto r = phase3_attack(p, plan, o);
        c.expect(r.successes == 0, "zero-offset " + std::string(to_string(victim)) + " campaign succeeded");
    }
    if (c.ok)
        c.detail = "10^4 monotone triples, 10^5 silent flips, fatal MCE on all 4 cores, 0 successes at 0 mV";
    return c;
}

// 8 ------------------------------------------------------------------------
Check scanner() {
    Check c;
    std::mt19937_64 gen(8);
    std::size_t total = 0;
    for (int n = 0; n < 1000; ++n) {
        const auto program = parse_program(oracle::random_program_text(gen), "random");
        std::set<std::tuple<std::size_t, std::size_t, int, int>> got;
        const auto hits = scan(program);
        for (const auto& h : hits)
            got.insert({h.op_index, h.store_index, h.gap, h.kind == PatternKind::VP2 ? 1 : 0});
        total += hits.size();
        c.expect(got.size() == hits.size() && got == oracle::brute_force_scan(program),
                 "program " + std::to_string(n) + " differs from the oracle");
    }
    const auto l3 = scan(bundled_program("listing3"));
    c.expect(l3.size() == 1 && l3[0].kind == PatternKind::VP1 && l3[0].op_index == 0 && l3[0].store_index == 1,
             "listing 3 does not give exactly one VP1 hit");
    if (c.ok)
        c.detail = "1000 random programs (" + std::to_string(total) + " hits) match; listing 3 -> one VP1";
    return c;
}

// 9 ------------------------------------------------------------------------
std::string run_cli(const std::string& args, int threads) {
    const std::string cmd = "OMP_NUM_THREADS=" + std::to_string(threads) + " '" VOLTLAB_CLI "' " + args;
    std::string out;
    if (FILE* f = popen(cmd.c_str(), "r")) {
        char buf[4096];
        std::size_t n;
        while ((n = fread(buf, 1, sizeof buf, f)) > 0)
            out.append(buf, n);
        if (pclose(f) != 0)
            out += "<nonzero exit>";
    }
    return out;
}

Check determinism() {
    Check c;
    const std::string commands[] = {
        "campaign --profile i7-7700K --victim hmac32 --core 1 --stressor listing2 --seed 9 --runs 3 --tries 4000",
        "campaign --profile i7-8700K --victim hmac1k --core 0 --stressor twofish --seed 9 --runs 2 --tries 1000",
        "campaign --profile i7-7700K --victim poc --core 2 --stressor listing2 --seed 9 --runs 3",
        "probe --profile i7-7700K --pstate 0x1B --tries 2000 --seed 9",
    };
    for (const auto& args : commands) {
        const auto a = run_cli(args, 1);
        const auto b = run_cli(args, 1);
        const auto p = run_cli(args, 4);
        c.expect(!a.empty() && a.find("<nonzero exit>") == std::string::npos, "CLI failed: " + args);
        c.expect(a == b, "repeat differs: " + args);
        c.expect(a == p, "1 vs 4 threads differ: " + args);
    }
    if (c.ok)
        c.detail = "4 CLI invocations byte-identical across repeats and 1 vs 4 threads";
    return c;
}

// 10 -----------------------------------------------------------------------
Check hmac() {
    Check c;
    auto bytes = [](std::string_view s) {
        const auto b = as_bytes(s);
        return std::vector<std::uint8_t>(b.begin(), b.end());
    };
    c.expect(to_hex(hmac_sha256(std::vector<std::uint8_t>(20, 0x0b), bytes("Hi There")).mac) ==
                 "b0344c61d8db38535ca8afceaf0bf12b881dc200c9833da726e9376c2e32cff7",
             "RFC 4231 case 1");
    c.expect(to_hex(hmac_sha256(bytes("Jefe"), bytes("what do ya want for nothing?")).mac) ==
                 "5bdcc146bf60754e6a042426089575c75a003f089d2739839dec58b964ec3843",
             "RFC 4231 case 2");
    c.expect(to_hex(hmac_sha256(std::vector<std::uint8_t>(20, 0xaa), std::vector<std::uint8_t>(50, 0xdd)).mac) ==
                 "773ea91e36800e46854db8ebd09181a72959098b3ef8c122d9635514ced565fe",
             "RFC 4231 case 3");
    c.expect(to_hex(hmac_sha256(std::vector<std::uint8_t>(131, 0xaa),
                                bytes("Test Using Larger Than Block-Size Key - Hash Key First"))
                        .mac) == "60e431591ee0b67f0d8a26aacbf5b77f8e0bc6213728c5140546040f0ee37f54",
             "RFC 4231 case 6");

    std::mt19937_64 gen(10);
    int changed = 0;
    for (std::size_t payload : {kHmacShortPayload, kHmacLongPayload}) {
        const auto& v = hmac_victim_data(payload);
        const auto stores = hmac_compressions(payload) * kStoresPerCompression;
        for (int k = 0; k < 500; ++k) {
            const auto target = std::uniform_int_distribution<std::uint64_t>(0, stores - 1)(gen);
            const int bit = std::uniform_int_distribution<int>(0, 127)(gen);
            const auto run = hmac_sha256(v.key, v.message, [&](std::uint64_t i, std::array<std::uint32_t, 4>& w) {
                if (i == target)
                    w[bit / 32] ^= 1u << (bit % 32);
            });
            c.expect(run.mac != v.expected, "a flip left the MAC unchanged");
            changed += run.mac != v.expected;
        }
    }
    if (c.ok)
        c.detail = "RFC 4231 vectors match; " + std::to_string(changed) + "/1000 single-bit flips change the MAC";
    return c;
}

} // namespace

int main() {
    struct Criterion {
        int id;
        const char* name;
        double budget_s;
        std::function<Check()> run;
    };
    const Criterion criteria[] = {
        {1, "codec bit-exactness", 1, codec},
        {2, "P-state arithmetic", 1, pstates},
        {3, "window search matches the profile windows", 30, window_search},
        {4, "HMAC campaign success rates", 120, hmac_campaigns},
        {5, "PoC success rates by stressor", 60, poc_campaigns},
        {6, "fault multiplicity and byte positions", 60, fault_locations},
        {7, "region and MCA properties", 60, regions_mca},
        {8, "scanner oracle equivalence", 60, scanner},
        {9, "CLI determinism", 120, determinism},
        {10, "HMAC oracle", 60, hmac},
    };
    int failed = 0;
    for (const auto& cr : criteria) {
        const auto start = std::chrono::steady_clock::now();
        Check r;
        try {
            r = cr.run();
        } catch (const std::exception& e) {
            r.ok = false;
            r.detail = std::string("exception: ") + e.what();
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        if (r.ok && secs > cr.budget_s) {
            r.ok = false;
            r.detail += " (over the " + fmt(cr.budget_s, 0) + " s budget)";
        }
        failed += !r.ok;
        std::cout << (r.ok ? "PASS" : "FAIL") << " criterion " << cr.id << " " << cr.name << " [" << fmt(secs, 2)
                  << " s]: " << r.detail << std::endl;
    }
    return failed == 0 ? 0 : 1;
}
