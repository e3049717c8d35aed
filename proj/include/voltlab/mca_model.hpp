#pragma once

// Simulated machine-check architecture. Corrected errors get logged, flips
// inside the exploit window pass through unseen, and kernel-level crashes
// raise a machine-check exception that every core sees.

#include "voltlab/processor_model.hpp"
#include "voltlab/rng.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace voltlab {

enum class MceKind { Corrected, UncorrectedFatal, InstructionDecodeCorrected };
std::string_view to_string(MceKind k);

struct MceRecord {
    std::uint64_t timestamp = 0; // slice index
    int core = 0;
    MceKind kind = MceKind::Corrected;
    bool broadcast = false;
    std::string detail;

    bool operator==(const MceRecord&) const = default;
};

enum class ProcessorExceptionKind { InvalidOpcode, GeneralProtection };
std::string_view to_string(ProcessorExceptionKind k);

struct McaConfig {
    double corrected_rate = 0.01;      // per slice inside the corrected-error band
    double decode_rate = 1e-3;         // per slice in the exploit window and below
    double decode_surface_rate = 0.5;  // share of decode errors that reach the victim as an exception
};

class MceLog {
public:
    /// Appends; throws InvariantError if the timestamp goes backwards.
    void append(MceRecord record);
    const std::vector<MceRecord>& records() const noexcept { return records_; }
    /// Records visible to one core: its own plus every broadcast.
    std::vector<MceRecord> view(int core) const;
    std::string to_json_lines() const;
    std::size_t size() const noexcept { return records_.size(); }
    bool empty() const noexcept { return records_.empty(); }

private:
    std::vector<MceRecord> records_;
};

struct MceOutcome {
    enum class Kind { Silent, Logged, Exception } kind = Kind::Silent;
    std::optional<MceRecord> record;

    bool silent() const { return kind == Kind::Silent; }
};

/// One slice's MCA reaction to the processor model's output.
MceOutcome observe(VoltageRegion region, const std::optional<BitFlipPattern>& fault,
                   const std::optional<CrashKind>& crash, const CounterStream& rng, std::uint64_t slice, int core,
                   const McaConfig& config = {});

struct DecodeError {
    MceRecord record;
    std::optional<ProcessorExceptionKind> surfaced;
};

/// Instruction-decode corrected errors in the exploit window and below.
std::optional<DecodeError> occasionally_decode_error(VoltageRegion region, const CounterStream& rng,
                                                     std::uint64_t slice, int core, const McaConfig& config = {});

} // namespace voltlab
