#include "voltlab/attack_orchestrator.hpp"
#include "voltlab/errors.hpp"
#include "voltlab/msr_codec.hpp"
#include "voltlab/pattern_scanner.hpp"
#include "voltlab/reporting.hpp"
#include "voltlab/victim_harness.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

using namespace voltlab;

namespace {

// Exit codes
constexpr int kExitInput = 3;     // malformed words, programs, profiles, options
constexpr int kExitUnknown = 4;   // unknown core, P-state or stressor
constexpr int kExitNoResult = 5;  // no window, unreachable calibration
constexpr int kExitAborted = 6;   // crash budget exhausted; partial result printed

MiniProgram program_arg(const std::string& arg) {
    if (std::filesystem::exists(arg))
        return load_program(arg);
    for (const auto& name : bundled_program_names())
        if (name == arg)
            return bundled_program(name);
    throw FormatError("no program file or bundled program named '" + arg + "'");
}

void print_breakdown(std::uint64_t word) {
    const auto cmd = decode_mailbox(word);
    std::cout << "msr      " << hex(word, 16) << '\n'
              << "domain   " << to_string(cmd.domain) << " (" << static_cast<int>(cmd.domain) << ")\n"
              << "command  " << to_string(cmd.command) << " (" << hex(static_cast<unsigned>(cmd.command)) << ")\n"
              << "mode     " << to_string(cmd.mode) << '\n';
    if (cmd.mode == VoltageMode::Offset)
        std::cout << "offset   " << cmd.offset_mv << " mV\n";
    else
        std::cout << "static   " << cmd.static_units << " units (" << cmd.static_units * 1000.0 / 1024.0
                  << " mV)\n";
}

struct CampaignArgs {
    std::string profile;
    std::string victim = "poc";
    int core = 0;
    std::string stressor = "listing2";
    std::uint64_t seed = 0;
    int runs = 5;
    std::uint64_t tries = 10'000;
    std::string pstate = "0x1B";
    std::optional<int> offset;
    bool csv = false;
    bool serial = false;
    bool interpret_poc = false;
    std::uint64_t crash_budget = 1000;
};

int run_campaign(const CampaignArgs& a) {
    const auto profile = load_profile_by_name(a.profile);
    const auto pstate = parse_pstate(a.pstate);
    const auto scenario = parse_scenario(a.victim);
    if (!is_attack_scenario(scenario))
        throw FormatError("victim must be poc, hmac32 or hmac1k");
    stressor_profile(a.stressor);
    profile.check_core(a.core);

    VoltagePlan plan;
    if (a.offset) {
        plan.processor = profile.model_name;
        plan.pstate = pstate;
    } else {
        Phase1Options p1;
        p1.seed = a.seed;
        p1.cores = std::vector<int>{a.core};
        plan = phase1_find_window(profile, bundled_program("listing3"), pstate, p1);
    }

    CampaignOptions co;
    co.victim = scenario;
    co.target_core = a.core;
    co.stressor = a.stressor;
    co.runs = a.runs;
    co.tries_per_run = a.tries;
    co.seed = a.seed;
    co.execution = a.serial ? Execution::Serial : Execution::Parallel;
    co.offset_mv = a.offset;
    co.interpret_poc = a.interpret_poc;
    co.crash_budget = a.crash_budget;

    auto emit = [&](const CampaignResult& r) {
        if (a.csv)
            std::cout << campaign_csv({r});
        else
            std::cout << dump(to_json(r));
    };
    try {
        emit(phase3_attack(profile, plan, co));
    } catch (const AbortedWithPartial<CampaignResult>& e) {
        emit(e.partial());
        throw;
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Simulated undervolting fault-injection lab"};
    app.require_subcommand(1);

    // encode-msr
    auto* enc = app.add_subcommand("encode-msr", "Encode an OC mailbox (MSR 0x150) word");
    std::string domain = "cores", command = "write", mode = "offset";
    std::optional<int> offset;
    std::optional<std::uint32_t> static_units;
    bool enc_json = false;
    enc->add_option("--domain", domain, "cores | gpu | llc | system-agent")->capture_default_str();
    enc->add_option("--command", command, "read | write")->capture_default_str();
    enc->add_option("--mode", mode, "offset | static")->capture_default_str();
    enc->add_option("--offset", offset, "Offset in mV, -1024..1023");
    enc->add_option("--static", static_units, "Static value in 1/1024 V units, 0..2047");
    enc->add_flag("--json", enc_json);

    // decode-msr
    auto* dec = app.add_subcommand("decode-msr", "Decode an OC mailbox word");
    std::string word_text;
    bool dec_json = false;
    dec->add_option("word", word_text, "Hexadecimal word")->required();
    dec->add_flag("--json", dec_json);

    // scan
    auto* scan_cmd = app.add_subcommand("scan", "List VP1/VP2 patterns of a program as JSON");
    std::string program_file;
    scan_cmd->add_option("program", program_file, "Program file or bundled program name")->required();

    // probe
    auto* probe = app.add_subcommand("probe", "Find voltage windows and the most fault-prone core");
    std::string probe_profile, probe_pstate = "0x1B", probe_stressor = "listing2";
    std::uint64_t probe_tries = 1000, probe_seed = 0;
    bool probe_serial = false;
    probe->add_option("--profile", probe_profile, "Profile file or bundled model name")->required();
    probe->add_option("--pstate", probe_pstate, "P-state ratio in hex")->capture_default_str();
    probe->add_option("--tries", probe_tries, "Test-loop runs per core")->capture_default_str();
    probe->add_option("--seed", probe_seed)->capture_default_str();
    probe->add_option("--stressor", probe_stressor, "listing2 | twofish | none")->capture_default_str();
    probe->add_flag("--serial", probe_serial, "Run trials on one thread");

    // campaign
    auto* camp = app.add_subcommand("campaign", "Run the attack against a victim");
    CampaignArgs ca;
    camp->add_option("--profile", ca.profile, "Profile file or bundled model name")->required();
    camp->add_option("--victim", ca.victim, "poc | hmac32 | hmac1k")->capture_default_str();
    camp->add_option("--core", ca.core, "Target physical core")->capture_default_str();
    camp->add_option("--stressor", ca.stressor, "listing2 | twofish | none")->capture_default_str();
    camp->add_option("--seed", ca.seed)->capture_default_str();
    camp->add_option("--runs", ca.runs)->capture_default_str();
    camp->add_option("--tries", ca.tries, "Victim tries per run")->capture_default_str();
    camp->add_option("--pstate", ca.pstate)->capture_default_str();
    camp->add_option("--offset", ca.offset, "Fixed offset in mV instead of searching the window");
    camp->add_option("--crash-budget", ca.crash_budget)->capture_default_str();
    camp->add_flag("--csv", ca.csv, "Emit the results table row instead of JSON");
    camp->add_flag("--serial", ca.serial, "Run trials on one thread");
    camp->add_flag("--interpret-poc", ca.interpret_poc, "Interpret every PoC iteration");

    // report
    auto* report = app.add_subcommand("report", "Fault location tables");
    report->require_subcommand(1);
    std::string report_profile;
    std::uint64_t report_faults = 1000, report_seed = 0;
    auto* heat = report->add_subcommand("heatmap", "Flipped bits per byte position and core (CSV)");
    auto* mult = report->add_subcommand("multiplicity", "Faults by number of flipped bits and core (CSV)");
    for (auto* sub : {heat, mult}) {
        sub->add_option("--profile", report_profile, "Profile file or bundled model name")->required();
        sub->add_option("--faults", report_faults, "Faults sampled per core")->capture_default_str();
        sub->add_option("--seed", report_seed)->capture_default_str();
    }

    CLI11_PARSE(app, argc, argv);

    try {
        if (*enc) {
            MailboxCommand cmd;
            cmd.domain = parse_domain(domain);
            cmd.command = parse_mailbox_op(command);
            cmd.mode = parse_voltage_mode(mode);
            if (cmd.mode == VoltageMode::Offset) {
                if (static_units)
                    throw FormatError("--static needs --mode static");
                cmd.offset_mv = offset.value_or(0);
            } else {
                if (offset)
                    throw FormatError("--offset needs --mode offset");
                cmd.static_units = static_units.value_or(0);
            }
            const auto word = encode_mailbox(cmd);
            if (enc_json)
                std::cout << dump(to_json(cmd, word));
            else
                std::cout << hex(word, 16) << '\n';
        } else if (*dec) {
            const auto word = parse_hex_word(word_text);
            if (dec_json)
                std::cout << dump(to_json(decode_mailbox(word), word));
            else
                print_breakdown(word);
        } else if (*scan_cmd) {
            const auto program = program_arg(program_file);
            std::cout << dump(to_json(scan(program), program));
        } else if (*probe) {
            const auto profile = load_profile_by_name(probe_profile);
            const auto pstate = parse_pstate(probe_pstate);
            const auto test = bundled_program("listing3");
            Phase1Options p1;
            p1.seed = probe_seed;
            p1.stressor = probe_stressor;
            const auto plan = phase1_find_window(profile, test, pstate, p1);
            Phase2Options p2;
            p2.seed = probe_seed;
            p2.stressor = probe_stressor;
            p2.execution = probe_serial ? Execution::Serial : Execution::Parallel;
            ordered_json out;
            out["plan"] = to_json(plan);
            try {
                out["probe"] = to_json(phase2_probe_cores(profile, plan, test, probe_tries, p2));
            } catch (const AbortedWithPartial<ProbeReport>& e) {
                out["probe"] = to_json(e.partial());
                out["aborted"] = true;
                std::cout << dump(out);
                throw;
            }
            std::cout << dump(out);
        } else if (*camp) {
            return run_campaign(ca);
        } else if (*report) {
            const auto profile = load_profile_by_name(report_profile);
            const auto sample = sample_fault_locations(profile, report_faults, report_seed);
            std::cout << (*heat ? heatmap_csv(profile, sample) : multiplicity_csv(profile, sample));
        }
    } catch (const AbortedByCrash& e) {
        std::cerr << "aborted: " << e.what() << '\n';
        return kExitAborted;
    } catch (const UnknownCoreOrPState& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitUnknown;
    } catch (const InvalidCore& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitUnknown;
    } catch (const UnknownStressor& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitUnknown;
    } catch (const NoWindowFound& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitNoResult;
    } catch (const CalibrationError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitNoResult;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitInput;
    }
    return 0;
}
