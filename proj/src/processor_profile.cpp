#include "voltlab/errors.hpp"
#include "voltlab/processor_model.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace voltlab {

using nlohmann::json;

namespace {

constexpr int kSchemaVersion = 1;

PState ratio_field(const json& j, unsigned base_clock) {
    if (j.is_string())
        return PState(parse_pstate(j.get<std::string>()).ratio(), base_clock);
    if (j.is_number_unsigned() || j.is_number_integer())
        return PState(j.get<unsigned>(), base_clock);
    throw SchemaError("ratio must be a hex string or integer");
}

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
    auto it = j.find(key);
    return it == j.end() ? fallback : it->get<T>();
}

ProcessorProfile parse(const json& doc) {
    if (!doc.is_object())
        throw SchemaError("profile document must be a JSON object");
    const int version = doc.at("schema_version").get<int>();
    if (version != kSchemaVersion)
        throw SchemaError("unsupported profile schema_version " + std::to_string(version));

    ProcessorProfile p;
    p.model_name = doc.at("model_name").get<std::string>();
    p.microarchitecture = get_or<std::string>(doc, "microarchitecture", "");
    p.physical_cores = doc.at("physical_cores").get<int>();
    p.threads_per_core = get_or(doc, "threads_per_core", 2);
    p.base_clock_mhz = get_or(doc, "base_clock_mhz", 100u);
    p.temperature_coefficient_mv_per_c = get_or(doc, "temperature_coefficient_mv_per_c", 0.2);
    p.voltage_noise_mv = get_or(doc, "voltage_noise_mv", 2.5);
    const double default_window = get_or(doc, "exploit_window_mv", 5.0);
    const double default_band = get_or(doc, "corrected_band_mv", 15.0);

    if (auto it = doc.find("fault_response"); it != doc.end()) {
        p.fault_response.clear();
        for (const auto& knot : *it)
            p.fault_response.emplace_back(knot.at(0).get<double>(), knot.at(1).get<double>());
    }
    if (auto it = doc.find("thermal"); it != doc.end()) {
        p.thermal.time_constant_s = get_or(*it, "time_constant_s", p.thermal.time_constant_s);
        p.thermal.attacker_rise_c = get_or(*it, "attacker_rise_c", p.thermal.attacker_rise_c);
        p.thermal.victim_rise_c = get_or(*it, "victim_rise_c", p.thermal.victim_rise_c);
        p.thermal.reference_load_c = get_or(*it, "reference_load_c", p.thermal.reference_load_c);
    }
    if (auto it = doc.find("crash"); it != doc.end()) {
        p.crash.base_rate = get_or(*it, "base_rate", p.crash.base_rate);
        if (auto r = it->find("reference_ratio"); r != it->end())
            p.crash.reference_ratio = ratio_field(*r, p.base_clock_mhz).ratio();
    }

    for (const auto& jp : doc.at("pstates")) {
        PStateProfile ps;
        ps.pstate = ratio_field(jp.at("ratio"), p.base_clock_mhz);
        ps.base_voltage_mv = volts_to_mv(jp.at("base_voltage").get<double>());
        ps.reference_temperature_c = jp.at("reference_temperature_c").get<double>();
        for (const auto& v : jp.at("fault_voltage"))
            ps.fault_voltage_mv.push_back(volts_to_mv(v.get<double>()));
        ps.attack_scale = get_or(jp, "attack_scale", 1.0);
        ps.exploit_window_mv = get_or(jp, "exploit_window_mv", default_window);
        ps.corrected_band_mv = get_or(jp, "corrected_band_mv", default_band);
        p.pstates.push_back(std::move(ps));
    }

    for (const auto& jc : doc.at("cores")) {
        CoreProfile c;
        const auto& aff = jc.at("byte_affinity");
        if (!aff.is_array() || aff.size() != kWordBytes)
            throw SchemaError("byte_affinity must have 16 weights");
        for (int i = 0; i < kWordBytes; ++i)
            c.byte_affinity[i] = aff[i].get<double>();
        const auto& mult = jc.at("multiplicity");
        if (!mult.is_array() || mult.size() != 3)
            throw SchemaError("multiplicity must hold P(1), P(2), P(3+)");
        for (int i = 0; i < 3; ++i)
            c.multiplicity[i] = mult[i].get<double>();
        p.cores.push_back(c);
    }

    if (auto it = doc.find("calibration"); it != doc.end()) {
        for (const auto& jc : *it) {
            CalibrationPoint cp;
            cp.core = jc.at("core").get<int>();
            cp.scenario = parse_scenario(jc.at("scenario").get<std::string>());
            cp.pstate = ratio_field(jc.at("pstate"), p.base_clock_mhz);
            cp.success_rate = jc.at("success_rate").get<double>();
            if (auto t = jc.find("start_temperature_c"); t != jc.end())
                cp.start_temperature_c = t->get<double>();
            cp.source = get_or<std::string>(jc, "source", "");
            p.calibration.push_back(std::move(cp));
        }
    }

    if (auto it = doc.find("provenance"); it != doc.end())
        for (const auto& [k, v] : it->items())
            p.provenance[k] = v.get<std::string>();
    if (auto it = doc.find("calibration_source"); it != doc.end())
        p.provenance["calibration_source"] = it->get<std::string>();
    return p;
}

} // namespace

void validate_profile(const ProcessorProfile& p) {
    auto fail = [&](const std::string& why) { throw InvariantError(p.model_name + ": " + why); };

    if (p.physical_cores < 1 || p.threads_per_core < 1)
        fail("core counts must be positive");
    if (p.pstates.empty())
        fail("no P-states");
    if (static_cast<int>(p.cores.size()) != p.physical_cores)
        fail("cores[] must describe every physical core");
    if (p.voltage_noise_mv < 0)
        fail("voltage noise must be nonnegative");

    if (p.fault_response.size() < 2 || p.fault_response.front() != std::pair{0.0, 0.0} ||
        p.fault_response.back() != std::pair{1.0, 1.0})
        fail("fault_response must run from (0,0) to (1,1)");
    for (std::size_t i = 1; i < p.fault_response.size(); ++i) {
        if (p.fault_response[i].first <= p.fault_response[i - 1].first)
            fail("fault_response knots must be strictly increasing in depth");
        if (p.fault_response[i].second < 0)
            fail("fault_response must be nonnegative");
    }

    std::set<int> ratios;
    for (const auto& ps : p.pstates) {
        if (!ratios.insert(ps.pstate.ratio()).second)
            fail("duplicate P-state " + hex(ps.pstate.ratio()));
        if (static_cast<int>(ps.fault_voltage_mv.size()) != p.physical_cores)
            fail("P-state " + hex(ps.pstate.ratio()) + " needs one fault voltage per core");
        for (double v : ps.fault_voltage_mv)
            if (!(v < ps.base_voltage_mv))
                fail("fault voltage must lie strictly below the base voltage at " + hex(ps.pstate.ratio()));
        if (ps.exploit_window_mv < 0 || ps.corrected_band_mv < 0)
            fail("window and band widths must be nonnegative");
        if (ps.attack_scale < 0)
            fail("attack_scale must be nonnegative");
    }

    for (std::size_t c = 0; c < p.cores.size(); ++c) {
        const auto& core = p.cores[c];
        bool any_positive = false;
        for (double w : core.byte_affinity) {
            if (w < 0)
                fail("negative byte affinity on core " + std::to_string(c));
            any_positive |= w > 0;
        }
        if (!any_positive)
            fail("core " + std::to_string(c) + " has no byte with positive affinity");
        double sum = 0;
        for (double m : core.multiplicity) {
            if (m < 0)
                fail("negative multiplicity probability on core " + std::to_string(c));
            sum += m;
        }
        if (std::abs(sum - 1.0) > 1e-6)
            fail("multiplicity distribution of core " + std::to_string(c) + " sums to " + std::to_string(sum));
    }

    for (const auto& cp : p.calibration) {
        if (cp.core < 0 || cp.core >= p.physical_cores)
            fail("calibration names unknown core " + std::to_string(cp.core));
        if (!p.find_pstate(cp.pstate))
            fail("calibration names unknown P-state " + hex(cp.pstate.ratio()));
        if (cp.success_rate < 0 || cp.success_rate >= 1)
            fail("calibration success rate must lie in [0, 1)");
    }
}

ProcessorProfile parse_profile(std::string_view json_text) {
    ProcessorProfile profile;
    try {
        profile = parse(json::parse(json_text));
    } catch (const json::exception& e) {
        throw SchemaError(std::string("malformed profile: ") + e.what());
    } catch (const RangeError& e) {
        throw SchemaError(std::string("malformed profile: ") + e.what());
    }
    validate_profile(profile);
    return profile;
}

ProcessorProfile load_profile(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in)
        throw SchemaError("cannot open profile " + path.string());
    std::ostringstream text;
    text << in.rdbuf();
    return parse_profile(text.str());
}

std::filesystem::path bundled_profile_path(std::string_view model) {
    return std::filesystem::path(VOLTLAB_DATA_DIR) / "profiles" / (std::string(model) + ".json");
}

std::vector<std::string> bundled_profile_names() {
    return {"i7-7700", "i7-7700K", "i7-8700K"};
}

ProcessorProfile load_profile_by_name(std::string_view name_or_path) {
    std::filesystem::path path(name_or_path);
    if (std::filesystem::exists(path))
        return load_profile(path);
    return load_profile(bundled_profile_path(name_or_path));
}

const PStateProfile* ProcessorProfile::find_pstate(const PState& p) const {
    for (const auto& ps : pstates)
        if (ps.pstate.ratio() == p.ratio())
            return &ps;
    return nullptr;
}

const PStateProfile& ProcessorProfile::pstate(const PState& p) const {
    if (const auto* ps = find_pstate(p))
        return *ps;
    throw UnknownCoreOrPState(model_name + " has no P-state " + hex(p.ratio()));
}

void ProcessorProfile::check_core(int core) const {
    if (core < 0 || core >= physical_cores)
        throw UnknownCoreOrPState(model_name + " has no core " + std::to_string(core));
}

const CalibrationPoint* ProcessorProfile::find_calibration(int core, Scenario scenario) const {
    for (const auto& cp : calibration)
        if (cp.core == core && cp.scenario == scenario)
            return &cp;
    return nullptr;
}

const CalibrationPoint& ProcessorProfile::calibration_for(int core, Scenario scenario) const {
    if (const auto* cp = find_calibration(core, scenario))
        return *cp;
    throw CalibrationError(model_name + " has no " + std::string(to_string(scenario)) + " calibration for core " +
                           std::to_string(core));
}

double ProcessorProfile::response(double depth) const {
    if (depth <= 0)
        return 0.0;
    if (depth >= 1)
        return fault_response.back().second;
    auto hi = std::upper_bound(fault_response.begin(), fault_response.end(), depth,
                               [](double d, const auto& knot) { return d < knot.first; });
    auto lo = hi - 1;
    const double t = (depth - lo->first) / (hi->first - lo->first);
    return lo->second + t * (hi->second - lo->second);
}

} // namespace voltlab
