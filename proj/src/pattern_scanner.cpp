#include "voltlab/pattern_scanner.hpp"

#include <algorithm>
#include <tuple>

namespace voltlab {

std::string_view to_string(PatternKind k) { return k == PatternKind::VP1 ? "VP1" : "VP2"; }

namespace {

std::optional<PatternKind> pattern_kind(Opcode op) {
    switch (op) {
    case Opcode::Vpxor:
    case Opcode::Vpand: return PatternKind::VP1;
    case Opcode::Vpaddq: return PatternKind::VP2;
    default: return std::nullopt;
    }
}

} // namespace

std::vector<PatternHit> scan(const MiniProgram& program) {
    // Forward pass keeping the last writer of every vector register. A store
    // pairs with that writer when it is a VP op no more than kMaxPatternGap
    // instructions back; any later write to the register replaces the entry.
    std::array<std::optional<std::size_t>, kVectorRegisters> last_writer{};
    std::vector<PatternHit> hits;
    const auto& code = program.instructions;
    for (std::size_t i = 0; i < code.size(); ++i) {
        const auto& in = code[i];
        if (in.is_store() && in.ops[0].kind == Operand::Kind::Xmm) {
            if (const auto w = last_writer[in.ops[0].reg]) {
                const auto kind = pattern_kind(code[*w].op);
                const int gap = static_cast<int>(i - *w - 1);
                if (kind && gap <= kMaxPatternGap)
                    hits.push_back({*kind, *w, i, gap});
            }
        }
        if (auto r = in.xmm_written())
            last_writer[*r] = i;
    }
    std::sort(hits.begin(), hits.end(),
              [](const PatternHit& a, const PatternHit& b) {
                  return std::tie(a.op_index, a.store_index) < std::tie(b.op_index, b.store_index);
              });
    return hits;
}

std::vector<bool> eligible_store_mask(const MiniProgram& program) {
    std::vector<bool> mask(program.size(), false);
    for (const auto& h : scan(program))
        mask[h.store_index] = true;
    return mask;
}

namespace {

class StoreCounter : public ExecutionObserver {
public:
    explicit StoreCounter(std::size_t store) : store_(store) {}
    bool on_slice(std::uint64_t slice, std::size_t insn_index) override {
        if (insn_index == store_) {
            if (!first)
                first = slice;
            last = slice;
            ++count;
        }
        return true;
    }
    std::optional<std::uint64_t> first, last;
    std::uint64_t count = 0;

private:
    std::size_t store_;
};

} // namespace

WindowEstimate estimate_window(const MiniProgram& program, const PatternHit& hit, std::uint64_t iterations_per_run,
                               std::uint64_t max_steps) {
    auto machine = default_machine();
    StoreCounter counter(hit.store_index);
    execute(program, machine, &counter, {}, max_steps);
    return {counter.first, counter.count * iterations_per_run, counter.last};
}

} // namespace voltlab
