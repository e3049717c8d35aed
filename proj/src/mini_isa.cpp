#include "voltlab/mini_isa.hpp"

#include "voltlab/errors.hpp"
#include "voltlab/rng.hpp"

#include <cctype>
#include <charconv>
#include <fstream>
#include <sstream>

namespace voltlab {

namespace {

constexpr std::array<std::string_view, kScalarRegisters> kGprNames = {
    "rax", "rcx", "rdx", "rbx", "rsp", "rbp", "rsi", "rdi",
    "r8",  "r9",  "r10", "r11", "r12", "r13", "r14", "r15",
};
constexpr int kRsp = 4;
constexpr int kRsi = 6;
constexpr int kRdi = 7;

std::string_view trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front())))
        s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back())))
        s.remove_suffix(1);
    return s;
}

bool is_label_char(char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '.';
}

[[noreturn]] void parse_fail(int line, const std::string& what) {
    throw ParseError("line " + std::to_string(line) + ": " + what);
}

std::int64_t parse_int(std::string_view text, int line) {
    std::string_view s = trim(text);
    bool negative = false;
    if (!s.empty() && (s.front() == '-' || s.front() == '+')) {
        negative = s.front() == '-';
        s.remove_prefix(1);
    }
    int base = 10;
    if (s.size() > 2 && s[0] == '0' && (s[1] == 'x' || s[1] == 'X')) {
        s.remove_prefix(2);
        base = 16;
    }
    std::uint64_t v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v, base);
    if (s.empty() || ec != std::errc{} || ptr != s.data() + s.size())
        parse_fail(line, "bad number '" + std::string(text) + "'");
    return negative ? -static_cast<std::int64_t>(v) : static_cast<std::int64_t>(v);
}

Operand parse_register(std::string_view name, int line) {
    if (name.size() > 3 && name.substr(0, 3) == "xmm") {
        const auto n = parse_int(name.substr(3), line);
        if (n < 0 || n >= kVectorRegisters)
            parse_fail(line, "no such vector register %" + std::string(name));
        return Operand::xmm(static_cast<int>(n));
    }
    for (int i = 0; i < kScalarRegisters; ++i)
        if (kGprNames[i] == name)
            return Operand::gpr(i);
    parse_fail(line, "unknown register %" + std::string(name));
}

// Returns Kind::None for a bare word (a label reference).
Operand parse_operand(std::string text, int line) {
    for (std::size_t p; (p = text.find("%%")) != std::string::npos;)
        text.erase(p, 1);
    std::string_view s = trim(text);
    if (s.empty())
        parse_fail(line, "empty operand");
    if (s.front() == '$')
        return Operand::imm(parse_int(s.substr(1), line));
    if (s.front() == '%')
        return parse_register(s.substr(1), line);
    if (auto open = s.find('('); open != std::string_view::npos) {
        if (s.back() != ')')
            parse_fail(line, "malformed memory operand '" + std::string(s) + "'");
        const auto disp = trim(s.substr(0, open));
        const auto inner = trim(s.substr(open + 1, s.size() - open - 2));
        if (inner.empty() || inner.front() != '%')
            parse_fail(line, "memory operand needs a base register");
        const auto base = parse_register(inner.substr(1), line);
        if (base.kind != Operand::Kind::Gpr)
            parse_fail(line, "memory base must be a scalar register");
        return Operand::mem(base.reg, disp.empty() ? 0 : parse_int(disp, line));
    }
    return {};
}

std::vector<std::string> split_operands(std::string_view s) {
    std::vector<std::string> out;
    if (trim(s).empty())
        return out;
    std::size_t start = 0;
    for (std::size_t i = 0; i <= s.size(); ++i) {
        if (i == s.size() || s[i] == ',') {
            out.emplace_back(trim(s.substr(start, i - start)));
            start = i + 1;
        }
    }
    return out;
}

using K = Operand::Kind;

void expect_kinds(const std::vector<Operand>& ops, std::initializer_list<std::initializer_list<K>> kinds,
                  std::string_view mnemonic, int line) {
    if (ops.size() != kinds.size())
        parse_fail(line, std::string(mnemonic) + " takes " + std::to_string(kinds.size()) + " operands");
    std::size_t i = 0;
    for (auto allowed : kinds) {
        bool ok = false;
        for (K k : allowed)
            ok |= ops[i].kind == k;
        if (!ok)
            parse_fail(line, "bad operand " + std::to_string(i + 1) + " for " + std::string(mnemonic));
        ++i;
    }
}

std::string lower(std::string_view s) {
    std::string out(s);
    for (auto& c : out)
        c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

std::string format_operand(const Operand& o) {
    switch (o.kind) {
    case K::None: return "";
    case K::Xmm: return "%xmm" + std::to_string(o.reg);
    case K::Gpr: return "%" + std::string(kGprNames[o.reg]);
    case K::Imm: return "$" + std::to_string(o.value);
    case K::Mem: return (o.value ? std::to_string(o.value) : "") + "(%" + std::string(kGprNames[o.reg]) + ")";
    }
    return "";
}

} // namespace

std::string_view to_string(Opcode op) {
    switch (op) {
    case Opcode::VmovdquLoad: return "VMOVDQU_load";
    case Opcode::VmovdquStore: return "VMOVDQU_store";
    case Opcode::Vpxor: return "VPXOR";
    case Opcode::Vpand: return "VPAND";
    case Opcode::Vpaddq: return "VPADDQ";
    case Opcode::Vpsllq: return "VPSLLQ";
    case Opcode::MovntStore: return "MOVNT_store";
    case Opcode::Sfence: return "SFENCE";
    case Opcode::Push: return "PUSH";
    case Opcode::Pop: return "POP";
    case Opcode::CmpBranch: return "CMP_branch";
    case Opcode::Jmp: return "JMP";
    case Opcode::Halt: return "HALT";
    }
    return "?";
}

std::optional<int> MiniInsn::xmm_written() const {
    switch (op) {
    case Opcode::VmovdquLoad: return ops[1].reg;
    case Opcode::Vpxor:
    case Opcode::Vpand:
    case Opcode::Vpaddq:
    case Opcode::Vpsllq: return ops[2].reg;
    default: return std::nullopt;
    }
}

std::string_view gpr_name(int reg) {
    if (reg < 0 || reg >= kScalarRegisters)
        throw RangeError("no scalar register " + std::to_string(reg));
    return kGprNames[reg];
}

int parse_gpr(std::string_view name) {
    if (!name.empty() && name.front() == '%')
        name.remove_prefix(1);
    for (int i = 0; i < kScalarRegisters; ++i)
        if (kGprNames[i] == name)
            return i;
    throw ParseError("unknown register '" + std::string(name) + "'");
}

MiniProgram parse_program(std::string_view text, std::string name) {
    MiniProgram prog;
    prog.name = std::move(name);
    std::vector<std::pair<std::size_t, std::string>> pending; // insn index -> label
    std::vector<int> pending_lines;

    int line_no = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        auto eol = text.find('\n', pos);
        if (eol == std::string_view::npos)
            eol = text.size();
        std::string_view line = text.substr(pos, eol - pos);
        pos = eol + 1;
        ++line_no;

        if (auto c = line.find("//"); c != std::string_view::npos)
            line = line.substr(0, c);
        if (auto c = line.find('#'); c != std::string_view::npos)
            line = line.substr(0, c);

        std::size_t spos = 0;
        while (spos <= line.size()) {
            auto semi = line.find(';', spos);
            if (semi == std::string_view::npos)
                semi = line.size();
            std::string_view stmt = trim(line.substr(spos, semi - spos));
            spos = semi + 1;

            // Leading labels.
            while (!stmt.empty()) {
                std::size_t i = 0;
                while (i < stmt.size() && is_label_char(stmt[i]))
                    ++i;
                if (i == 0 || i >= stmt.size() || stmt[i] != ':')
                    break;
                std::string label(stmt.substr(0, i));
                if (!prog.labels.emplace(label, static_cast<int>(prog.instructions.size())).second)
                    parse_fail(line_no, "duplicate label '" + label + "'");
                stmt = trim(stmt.substr(i + 1));
            }
            if (stmt.empty())
                continue;

            std::size_t sp = 0;
            while (sp < stmt.size() && !std::isspace(static_cast<unsigned char>(stmt[sp])))
                ++sp;
            const std::string mnemonic = lower(stmt.substr(0, sp));
            const auto texts = split_operands(stmt.substr(sp));
            std::vector<Operand> ops;
            for (const auto& t : texts)
                ops.push_back(parse_operand(t, line_no));

            MiniInsn insn;
            insn.line = line_no;
            if (mnemonic == "vmovdqu" || mnemonic == "movdqu") {
                if (ops.size() == 2 && ops[0].kind == K::Mem && ops[1].kind == K::Xmm)
                    insn.op = Opcode::VmovdquLoad;
                else if (ops.size() == 2 && ops[0].kind == K::Xmm && ops[1].kind == K::Mem)
                    insn.op = Opcode::VmovdquStore;
                else
                    parse_fail(line_no, mnemonic + " needs mem,xmm or xmm,mem");
            } else if (mnemonic == "movntdq" || mnemonic == "vmovntdq" || mnemonic == "movntq") {
                expect_kinds(ops, {{K::Xmm}, {K::Mem}}, mnemonic, line_no);
                insn.op = Opcode::MovntStore;
            } else if (mnemonic == "vpxor" || mnemonic == "vpand" || mnemonic == "vpaddq") {
                expect_kinds(ops, {{K::Xmm}, {K::Xmm}, {K::Xmm}}, mnemonic, line_no);
                insn.op = mnemonic == "vpxor" ? Opcode::Vpxor : mnemonic == "vpand" ? Opcode::Vpand : Opcode::Vpaddq;
            } else if (mnemonic == "vpsllq") {
                expect_kinds(ops, {{K::Xmm, K::Imm}, {K::Xmm}, {K::Xmm}}, mnemonic, line_no);
                insn.op = Opcode::Vpsllq;
            } else if (mnemonic == "sfence") {
                expect_kinds(ops, {}, mnemonic, line_no);
                insn.op = Opcode::Sfence;
            } else if (mnemonic == "hlt" || mnemonic == "halt") {
                expect_kinds(ops, {}, mnemonic, line_no);
                insn.op = Opcode::Halt;
            } else if (mnemonic == "push" || mnemonic == "pushq" || mnemonic == "pop" || mnemonic == "popq") {
                expect_kinds(ops, {{K::Gpr}}, mnemonic, line_no);
                insn.op = mnemonic.rfind("push", 0) == 0 ? Opcode::Push : Opcode::Pop;
            } else if (mnemonic == "jmp") {
                expect_kinds(ops, {{K::None}}, mnemonic, line_no);
                insn.op = Opcode::Jmp;
                pending.emplace_back(prog.instructions.size(), texts[0]);
                pending_lines.push_back(line_no);
            } else if (mnemonic == "cmpjeq" || mnemonic == "cmpjne") {
                expect_kinds(ops, {{K::Xmm, K::Mem, K::Gpr, K::Imm}, {K::Xmm, K::Mem, K::Gpr, K::Imm}, {K::None}},
                             mnemonic, line_no);
                const bool wide0 = ops[0].kind == K::Xmm || ops[0].kind == K::Mem;
                const bool wide1 = ops[1].kind == K::Xmm || ops[1].kind == K::Mem;
                if (wide0 != wide1)
                    parse_fail(line_no, "cannot compare a 128-bit operand with a 64-bit one");
                insn.op = Opcode::CmpBranch;
                insn.branch_if_equal = mnemonic == "cmpjeq";
                pending.emplace_back(prog.instructions.size(), texts[2]);
                pending_lines.push_back(line_no);
            } else {
                parse_fail(line_no, "unknown instruction '" + mnemonic + "'");
            }
            for (std::size_t i = 0; i < ops.size() && i < insn.ops.size(); ++i)
                if (ops[i].kind != K::None)
                    insn.ops[i] = ops[i];
            prog.instructions.push_back(insn);
        }
    }

    for (std::size_t i = 0; i < pending.size(); ++i) {
        auto it = prog.labels.find(pending[i].second);
        if (it == prog.labels.end())
            parse_fail(pending_lines[i], "undefined label '" + pending[i].second + "'");
        prog.instructions[pending[i].first].target = it->second;
    }
    return prog;
}

MiniProgram load_program(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in)
        throw ParseError("cannot open program " + path.string());
    std::ostringstream text;
    text << in.rdbuf();
    return parse_program(text.str(), path.stem().string());
}

std::string format_insn(const MiniInsn& insn, const MiniProgram* program) {
    auto target = [&] {
        if (program)
            for (const auto& [name, index] : program->labels)
                if (index == insn.target)
                    return name;
        return "@" + std::to_string(insn.target);
    };
    switch (insn.op) {
    case Opcode::VmovdquLoad:
    case Opcode::VmovdquStore:
        return "vmovdqu " + format_operand(insn.ops[0]) + ", " + format_operand(insn.ops[1]);
    case Opcode::MovntStore: return "movntdq " + format_operand(insn.ops[0]) + ", " + format_operand(insn.ops[1]);
    case Opcode::Vpxor:
    case Opcode::Vpand:
    case Opcode::Vpaddq:
    case Opcode::Vpsllq: {
        std::string m = insn.op == Opcode::Vpxor   ? "vpxor"
                        : insn.op == Opcode::Vpand ? "vpand"
                        : insn.op == Opcode::Vpaddq ? "vpaddq"
                                                    : "vpsllq";
        return m + " " + format_operand(insn.ops[0]) + ", " + format_operand(insn.ops[1]) + ", " +
               format_operand(insn.ops[2]);
    }
    case Opcode::Sfence: return "sfence";
    case Opcode::Push: return "push " + format_operand(insn.ops[0]);
    case Opcode::Pop: return "pop " + format_operand(insn.ops[0]);
    case Opcode::CmpBranch:
        return std::string(insn.branch_if_equal ? "cmpjeq " : "cmpjne ") + format_operand(insn.ops[0]) + ", " +
               format_operand(insn.ops[1]) + ", " + target();
    case Opcode::Jmp: return "jmp " + target();
    case Opcode::Halt: return "hlt";
    }
    return "?";
}

std::string format_program(const MiniProgram& program) {
    std::string out;
    for (std::size_t i = 0; i < program.instructions.size(); ++i) {
        for (const auto& [name, index] : program.labels)
            if (index == static_cast<int>(i))
                out += name + ":\n";
        out += "    " + format_insn(program.instructions[i], &program) + "\n";
    }
    for (const auto& [name, index] : program.labels)
        if (index == static_cast<int>(program.instructions.size()))
            out += name + ":\n";
    return out;
}

// --- machine ---------------------------------------------------------------

namespace {

void check_range(const std::vector<std::uint8_t>& memory, std::uint64_t address, std::uint64_t width) {
    if (address > memory.size() || memory.size() - address < width)
        throw InterpreterError("memory access at 0x" + std::to_string(address) + " outside " +
                               std::to_string(memory.size()) + "-byte memory");
}

} // namespace

std::uint64_t MachineState::load64(std::uint64_t address) const {
    check_range(memory, address, 8);
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i)
        v = (v << 8) | memory[address + i];
    return v;
}

void MachineState::store64(std::uint64_t address, std::uint64_t value) {
    check_range(memory, address, 8);
    for (int i = 0; i < 8; ++i)
        memory[address + i] = static_cast<std::uint8_t>(value >> (8 * i));
}

Vec128 MachineState::load128(std::uint64_t address) const {
    check_range(memory, address, 16);
    return {load64(address), load64(address + 8)};
}

void MachineState::store128(std::uint64_t address, const Vec128& value) {
    check_range(memory, address, 16);
    store64(address, value[0]);
    store64(address + 8, value[1]);
}

MachineState default_machine() {
    MachineState m;
    m.memory.assign(1024, 0);
    m.gpr[kRdi] = 0x000;
    m.gpr[kRsi] = 0x100;
    m.gpr[kRsp] = 0x3C0;
    for (std::uint64_t a = 0x100; a < 0x200; a += 8)
        m.store64(a, ~std::uint64_t{0});
    for (int r = 0; r < kVectorRegisters; ++r)
        m.xmm[r] = {mix64(2 * r + 1), mix64(2 * r + 2)};
    return m;
}

namespace {

std::uint64_t address_of(const MachineState& s, const Operand& o) {
    return s.gpr[o.reg] + static_cast<std::uint64_t>(o.value);
}

const Vec128& xmm_operand(const MachineState& s, const Operand& o, std::size_t pc) {
    if (o.kind != K::Xmm || o.reg < 0 || o.reg >= kVectorRegisters)
        throw InterpreterError("instruction " + std::to_string(pc) + " needs a vector register operand");
    return s.xmm[o.reg];
}

void check_gpr(const Operand& o, std::size_t pc) {
    if (o.kind != K::Gpr || o.reg < 0 || o.reg >= kScalarRegisters)
        throw InterpreterError("instruction " + std::to_string(pc) + " needs a scalar register operand");
}

std::uint64_t mem_address(const MachineState& s, const Operand& o, std::size_t pc) {
    if (o.kind != K::Mem || o.reg < 0 || o.reg >= kScalarRegisters)
        throw InterpreterError("instruction " + std::to_string(pc) + " needs a memory operand");
    return address_of(s, o);
}

Vec128 wide_value(const MachineState& s, const Operand& o, std::size_t pc) {
    if (o.kind == K::Mem)
        return s.load128(mem_address(s, o, pc));
    return xmm_operand(s, o, pc);
}

std::uint64_t narrow_value(const MachineState& s, const Operand& o, std::size_t pc) {
    if (o.kind == K::Imm)
        return static_cast<std::uint64_t>(o.value);
    check_gpr(o, pc);
    return s.gpr[o.reg];
}

} // namespace

ExecResult execute(const MiniProgram& program, MachineState& s, ExecutionObserver* observer,
                   const std::vector<bool>& eligible, std::uint64_t max_steps) {
    ExecResult r;
    std::size_t pc = 0;
    const auto& code = program.instructions;
    while (r.steps < max_steps) {
        if (pc >= code.size()) {
            r.halted = true;
            r.final_index = code.size();
            return r;
        }
        const auto& in = code[pc];
        const std::uint64_t slice = r.steps;
        if (observer && !observer->on_slice(slice, pc)) {
            r.stopped = true;
            r.final_index = pc;
            return r;
        }
        ++r.steps;
        std::size_t next = pc + 1;
        switch (in.op) {
        case Opcode::VmovdquLoad: {
            const auto v = s.load128(mem_address(s, in.ops[0], pc));
            xmm_operand(s, in.ops[1], pc);
            s.xmm[in.ops[1].reg] = v;
            break;
        }
        case Opcode::VmovdquStore:
        case Opcode::MovntStore: {
            Vec128 v = xmm_operand(s, in.ops[0], pc);
            const auto addr = mem_address(s, in.ops[1], pc);
            if (observer && pc < eligible.size() && eligible[pc])
                observer->on_eligible_store(slice, pc, addr, v);
            s.store128(addr, v);
            break;
        }
        case Opcode::Vpxor:
        case Opcode::Vpand:
        case Opcode::Vpaddq: {
            const auto a = xmm_operand(s, in.ops[0], pc);
            const auto b = xmm_operand(s, in.ops[1], pc);
            xmm_operand(s, in.ops[2], pc);
            Vec128 d;
            for (int l = 0; l < 2; ++l)
                d[l] = in.op == Opcode::Vpxor ? a[l] ^ b[l] : in.op == Opcode::Vpand ? a[l] & b[l] : a[l] + b[l];
            s.xmm[in.ops[2].reg] = d;
            break;
        }
        case Opcode::Vpsllq: {
            std::uint64_t count;
            if (in.ops[0].kind == K::Imm)
                count = static_cast<std::uint64_t>(in.ops[0].value);
            else
                count = xmm_operand(s, in.ops[0], pc)[0];
            const auto src = xmm_operand(s, in.ops[1], pc);
            xmm_operand(s, in.ops[2], pc);
            Vec128 d{};
            if (count < 64)
                d = {src[0] << count, src[1] << count};
            s.xmm[in.ops[2].reg] = d;
            break;
        }
        case Opcode::Sfence: break;
        case Opcode::Push:
            check_gpr(in.ops[0], pc);
            s.gpr[kRsp] -= 8;
            s.store64(s.gpr[kRsp], s.gpr[in.ops[0].reg]);
            break;
        case Opcode::Pop:
            check_gpr(in.ops[0], pc);
            s.gpr[in.ops[0].reg] = s.load64(s.gpr[kRsp]);
            s.gpr[kRsp] += 8;
            break;
        case Opcode::CmpBranch: {
            const bool wide0 = in.ops[0].kind == K::Xmm || in.ops[0].kind == K::Mem;
            const bool wide1 = in.ops[1].kind == K::Xmm || in.ops[1].kind == K::Mem;
            if (wide0 != wide1)
                throw InterpreterError("instruction " + std::to_string(pc) + " compares mismatched widths");
            const bool equal = wide0 ? wide_value(s, in.ops[0], pc) == wide_value(s, in.ops[1], pc)
                                     : narrow_value(s, in.ops[0], pc) == narrow_value(s, in.ops[1], pc);
            if (in.target < 0 || in.target > static_cast<int>(code.size()))
                throw InterpreterError("branch at " + std::to_string(pc) + " has no target");
            if (equal == in.branch_if_equal)
                next = static_cast<std::size_t>(in.target);
            break;
        }
        case Opcode::Jmp:
            if (in.target < 0 || in.target > static_cast<int>(code.size()))
                throw InterpreterError("jump at " + std::to_string(pc) + " has no target");
            next = static_cast<std::size_t>(in.target);
            break;
        case Opcode::Halt:
            r.halted = true;
            r.final_index = pc;
            return r;
        }
        pc = next;
    }
    r.final_index = pc;
    return r;
}

MachineState interpret(const MiniProgram& program, MachineState input, std::uint64_t max_steps) {
    const auto r = execute(program, input, nullptr, {}, max_steps);
    if (!r.halted)
        throw InterpreterError("program '" + program.name + "' did not halt within " + std::to_string(max_steps) +
                               " steps");
    return input;
}

} // namespace voltlab
