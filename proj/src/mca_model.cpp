#include "voltlab/mca_model.hpp"

#include "voltlab/errors.hpp"

#include <json.hpp>

namespace voltlab {

std::string_view to_string(MceKind k) {
    switch (k) {
    case MceKind::Corrected: return "corrected";
    case MceKind::UncorrectedFatal: return "uncorrected-fatal";
    case MceKind::InstructionDecodeCorrected: return "instruction-decode-corrected";
    }
    return "?";
}

std::string_view to_string(ProcessorExceptionKind k) {
    return k == ProcessorExceptionKind::InvalidOpcode ? "invalid-opcode" : "general-protection";
}

void MceLog::append(MceRecord record) {
    if (!records_.empty() && record.timestamp < records_.back().timestamp)
        throw InvariantError("MCE log timestamps must not go backwards");
    records_.push_back(std::move(record));
}

std::vector<MceRecord> MceLog::view(int core) const {
    std::vector<MceRecord> out;
    for (const auto& r : records_)
        if (r.broadcast || r.core == core)
            out.push_back(r);
    return out;
}

std::string MceLog::to_json_lines() const {
    std::string out;
    for (const auto& r : records_) {
        nlohmann::ordered_json j;
        j["timestamp"] = r.timestamp;
        j["core"] = r.core;
        j["kind"] = to_string(r.kind);
        j["broadcast"] = r.broadcast;
        j["detail"] = r.detail;
        out += j.dump();
        out += '\n';
    }
    return out;
}

MceOutcome observe(VoltageRegion region, const std::optional<BitFlipPattern>& fault,
                   const std::optional<CrashKind>& crash, const CounterStream& rng, std::uint64_t slice, int core,
                   const McaConfig& config) {
    if (crash) {
        if (*crash != CrashKind::KernelException)
            return {}; // the machine is gone before anything is reported
        return {MceOutcome::Kind::Exception,
                MceRecord{slice, core, MceKind::UncorrectedFatal, true, "machine check exception, kernel panic"}};
    }
    // Exploit-window flips are invisible to the MCA whether or not one happened.
    (void)fault;
    if (region == VoltageRegion::CorrectedErrors && rng.uniform(slice, lane::kMca) < config.corrected_rate)
        return {MceOutcome::Kind::Logged, MceRecord{slice, core, MceKind::Corrected, false, "corrected data error"}};
    return {};
}

std::optional<DecodeError> occasionally_decode_error(VoltageRegion region, const CounterStream& rng,
                                                     std::uint64_t slice, int core, const McaConfig& config) {
    if (region != VoltageRegion::ExploitWindow && region != VoltageRegion::Unstable)
        return std::nullopt;
    if (rng.uniform(slice, lane::kDecode) >= config.decode_rate)
        return std::nullopt;
    DecodeError e{MceRecord{slice, core, MceKind::InstructionDecodeCorrected, false, "instruction decode error corrected"},
                  std::nullopt};
    const double u = rng.uniform(slice, lane::kDecodeSurface);
    if (u < config.decode_surface_rate)
        e.surfaced = u < 0.5 * config.decode_surface_rate ? ProcessorExceptionKind::InvalidOpcode
                                                          : ProcessorExceptionKind::GeneralProtection;
    return e;
}

} // namespace voltlab
