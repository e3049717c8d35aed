#pragma once

// Finds the fault-susceptible SIMD patterns in a mini-ISA program:
//   VP1  vpxor/vpand result stored to memory shortly afterwards
//   VP2  vpaddq result stored to memory shortly afterwards

#include "voltlab/mini_isa.hpp"

#include <cstdint>
#include <optional>
#include <vector>

namespace voltlab {

enum class PatternKind { VP1, VP2 };
std::string_view to_string(PatternKind k);

/// Most instructions allowed between the vector op and its store.
inline constexpr int kMaxPatternGap = 3;

struct PatternHit {
    PatternKind kind = PatternKind::VP1;
    std::size_t op_index = 0;
    std::size_t store_index = 0;
    int gap = 0;

    auto operator<=>(const PatternHit&) const = default;
};

/// Hits ordered by (op_index, store_index).
std::vector<PatternHit> scan(const MiniProgram& program);

/// Per-instruction flag: true for the stores of scan() hits.
std::vector<bool> eligible_store_mask(const MiniProgram& program);

struct WindowEstimate {
    std::optional<std::uint64_t> first_slice; // empty if the store never runs
    std::uint64_t duration_slices = 0;        // executions of the store over all iterations
    std::optional<std::uint64_t> last_slice;  // within one run
};

/// One instruction per slice; runs the program once on the default machine.
WindowEstimate estimate_window(const MiniProgram& program, const PatternHit& hit, std::uint64_t iterations_per_run,
                               std::uint64_t max_steps = kDefaultStepBudget);

} // namespace voltlab
