#pragma once

// A small AT&T-flavoured vector ISA: enough of SSE/AVX to run the test
// loops, the shift-loop stressor and the enclave PoC, with a hook at every
// store so the fault model can corrupt the value on its way to memory.

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace voltlab {

using Vec128 = std::array<std::uint64_t, 2>; // [0] = low lane

inline constexpr int kVectorRegisters = 16;
inline constexpr int kScalarRegisters = 16;

enum class Opcode {
    VmovdquLoad,
    VmovdquStore,
    Vpxor,
    Vpand,
    Vpaddq,
    Vpsllq,
    MovntStore,
    Sfence,
    Push,
    Pop,
    CmpBranch,
    Jmp,
    Halt,
};

std::string_view to_string(Opcode op);

struct Operand {
    enum class Kind { None, Xmm, Gpr, Mem, Imm } kind = Kind::None;
    int reg = 0;            // Xmm/Gpr register, Mem base register
    std::int64_t value = 0; // Mem displacement or immediate

    static Operand xmm(int r) { return {Kind::Xmm, r, 0}; }
    static Operand gpr(int r) { return {Kind::Gpr, r, 0}; }
    static Operand mem(int base, std::int64_t disp = 0) { return {Kind::Mem, base, disp}; }
    static Operand imm(std::int64_t v) { return {Kind::Imm, 0, v}; }

    bool operator==(const Operand&) const = default;
};

// Operand order follows AT&T: sources first, destination last.
//   loads      mem, xmm          stores  xmm, mem
//   vpxor...   src1, src2, dst   vpsllq  count, src, dst
//   cmpjne/eq  a, b  (+ target)  push/pop gpr
struct MiniInsn {
    Opcode op = Opcode::Halt;
    std::array<Operand, 3> ops{};
    int target = -1;            // jump/branch destination (instruction index)
    bool branch_if_equal = false;
    int line = 0;               // source line, 0 when built in code

    bool is_store() const { return op == Opcode::VmovdquStore || op == Opcode::MovntStore; }
    bool is_vector_op() const {
        return op == Opcode::Vpxor || op == Opcode::Vpand || op == Opcode::Vpaddq || op == Opcode::Vpsllq;
    }
    /// Vector register written by this instruction, if any.
    std::optional<int> xmm_written() const;
    bool operator==(const MiniInsn&) const = default;
};

struct MiniProgram {
    std::string name;
    std::vector<MiniInsn> instructions;
    std::map<std::string, int> labels;

    std::size_t size() const { return instructions.size(); }
};

/// Parses the listing syntax subset. Throws ParseError with the line number.
MiniProgram parse_program(std::string_view text, std::string name = {});
MiniProgram load_program(const std::filesystem::path& path);
std::string format_insn(const MiniInsn& insn, const MiniProgram* program = nullptr);
std::string format_program(const MiniProgram& program);

std::string_view gpr_name(int reg);
int parse_gpr(std::string_view name);

struct MachineState {
    std::vector<std::uint8_t> memory;
    std::array<std::uint64_t, kScalarRegisters> gpr{};
    std::array<Vec128, kVectorRegisters> xmm{};

    Vec128 load128(std::uint64_t address) const;
    void store128(std::uint64_t address, const Vec128& value);
    std::uint64_t load64(std::uint64_t address) const;
    void store64(std::uint64_t address, std::uint64_t value);

    bool operator==(const MachineState&) const = default;
};

/// 1 KiB of memory, rdi = 0x000 (output), rsi = 0x100 (input), rsp = 0x3C0,
/// the input area filled with all-ones words and vector registers with fixed patterns.
MachineState default_machine();

class ExecutionObserver {
public:
    virtual ~ExecutionObserver() = default;
    /// Before each instruction; returning false stops execution.
    virtual bool on_slice(std::uint64_t slice, std::size_t insn_index) {
        (void)slice, (void)insn_index;
        return true;
    }
    /// Eligible stores only; may corrupt `value` before it reaches memory.
    virtual void on_eligible_store(std::uint64_t slice, std::size_t insn_index, std::uint64_t address,
                                   Vec128& value) {
        (void)slice, (void)insn_index, (void)address, (void)value;
    }
};

struct ExecResult {
    std::uint64_t steps = 0;
    bool halted = false;            // reached HLT or ran off the end
    bool stopped = false;           // observer stopped execution
    std::size_t final_index = 0;    // instruction index of HLT / stop point / program size
};

inline constexpr std::uint64_t kDefaultStepBudget = 1'000'000;

/// Runs from instruction 0 until halt, observer stop or the step budget.
/// `eligible` marks stores the observer may corrupt (empty = none).
ExecResult execute(const MiniProgram& program, MachineState& state, ExecutionObserver* observer = nullptr,
                   const std::vector<bool>& eligible = {}, std::uint64_t max_steps = kDefaultStepBudget);

/// Fault-free run to completion; throws InterpreterError if the program does not halt.
MachineState interpret(const MiniProgram& program, MachineState input,
                       std::uint64_t max_steps = kDefaultStepBudget);

} // namespace voltlab
