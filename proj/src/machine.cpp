#include "compartos/machine.hpp"

#include <cstdio>
#include <stdexcept>

namespace compartos {

Capability& RegisterFile::cap(uint8_t idx)
{
    switch (idx) {
    case CREG_CGP: return cgp;
    case CREG_CSP: return csp;
    case CREG_CRA: return cra;
    case CREG_PCC: return pcc;
    case CREG_CTX: return ctx;
    default: return c[idx];
    }
}

const Capability& RegisterFile::cap(uint8_t idx) const
{
    return const_cast<RegisterFile*>(this)->cap(idx);
}

const char* run_status_name(RunStatus s)
{
    switch (s) {
    case RunStatus::Halted: return "Halted";
    case RunStatus::Trapped: return "Trapped";
    case RunStatus::BudgetExhausted: return "BudgetExhausted";
    case RunStatus::Yielded: return "Yielded";
    }
    return "?";
}

const char* fault_kind_name(FaultKind kind)
{
    switch (kind) {
    case FaultKind::TagViolation: return "TagViolation";
    case FaultKind::SealViolation: return "SealViolation";
    case FaultKind::PermViolation: return "PermViolation";
    case FaultKind::BoundsViolation: return "BoundsViolation";
    case FaultKind::IllegalInstruction: return "IllegalInstruction";
    }
    return "?";
}

std::string to_string(const FaultRecord& f)
{
    char buf[128];
    std::snprintf(buf, sizeof buf, "%s comp=%d pc=0x%x %s",
                  fault_kind_name(f.kind), f.comp_id, f.pc, f.detail.c_str());
    return buf;
}

// Tag -> Seal -> Perm -> Bounds, fixed so fault kinds are reproducible.
static std::optional<FaultKind> check_access(const TaggedMemory& mem,
                                             const Capability& cap,
                                             int64_t offset, uint64_t size,
                                             uint8_t perm, bool insecure,
                                             bool align16)
{
    int64_t saddr = int64_t(cap.cursor) + offset;
    if (insecure) {
        // Only physical memory limits remain.
        if (saddr < 0 || uint64_t(saddr) + size > mem.size())
            return FaultKind::BoundsViolation;
        if (align16 && saddr % kCapSize != 0)
            return FaultKind::BoundsViolation;
        return std::nullopt;
    }
    if (!cap.tag)
        return FaultKind::TagViolation;
    if (cap.sealed())
        return FaultKind::SealViolation;
    if (!cap.has(perm))
        return FaultKind::PermViolation;
    if (saddr < 0 || !cap.contains(uint64_t(saddr), size))
        return FaultKind::BoundsViolation;
    if (align16 && saddr % kCapSize != 0)
        return FaultKind::BoundsViolation;
    return std::nullopt;
}

Checked<Word> load_word(const TaggedMemory& mem, const Capability& cap,
                        int64_t offset, bool insecure)
{
    if (auto f = check_access(mem, cap, offset, 8, PERM_LOAD, insecure, false))
        return {0, f};
    return {mem.read_word(Addr(cap.cursor + offset)), std::nullopt};
}

std::optional<FaultKind> store_word(TaggedMemory& mem, const Capability& cap,
                                    int64_t offset, Word value, bool insecure)
{
    if (auto f = check_access(mem, cap, offset, 8, PERM_STORE, insecure, false))
        return f;
    mem.write_word(Addr(cap.cursor + offset), value);
    return std::nullopt;
}

Checked<Capability> load_cap(const TaggedMemory& mem, const Capability& cap,
                             int64_t offset, bool insecure)
{
    if (auto f = check_access(mem, cap, offset, kCapSize, PERM_LOAD_CAP,
                              insecure, true))
        return {{}, f};
    return {mem.read_cap(Addr(cap.cursor + offset)), std::nullopt};
}

std::optional<FaultKind> store_cap(TaggedMemory& mem, const Capability& cap,
                                   int64_t offset, const Capability& value,
                                   bool insecure)
{
    if (auto f = check_access(mem, cap, offset, kCapSize, PERM_STORE_CAP,
                              insecure, true))
        return f;
    mem.write_cap(Addr(cap.cursor + offset), value);
    return std::nullopt;
}

Machine::Machine(Addr memory_size, bool insecure)
    : mem_(memory_size), insecure_(insecure)
{
}

void Machine::add_trampoline_range(Addr base, Addr size)
{
    trampoline_ranges_.emplace_back(base, base + size);
}

bool Machine::in_trampoline(Addr pc) const
{
    for (auto& [lo, hi] : trampoline_ranges_)
        if (pc >= lo && pc < hi)
            return true;
    return false;
}

StepOutcome Machine::trap(FaultKind kind, Addr pc, std::string detail)
{
    FaultRecord f;
    f.kind = kind;
    f.comp_id = compid_;
    f.pc = pc;
    f.detail = std::move(detail);
    return {StepStatus::Trapped, f};
}

static FaultKind fault_of(CapError err)
{
    switch (err) {
    case CapError::TagViolation: return FaultKind::TagViolation;
    case CapError::SealViolation: return FaultKind::SealViolation;
    case CapError::PermViolation: return FaultKind::PermViolation;
    default: return FaultKind::BoundsViolation;  // monotonicity
    }
}

StepOutcome Machine::step()
{
    Addr pc = regs_.pcc.cursor;
    if (auto f = check_access(mem_, regs_.pcc, 0, kInstrSize, PERM_EXECUTE,
                              insecure_, false))
        return trap(*f, pc, "fetch");

    std::array<uint8_t, kInstrSize> raw;
    mem_.read_bytes(pc, raw);
    auto decoded = decode_instruction(raw);
    if (!decoded)
        return trap(FaultKind::IllegalInstruction, pc, "bad opcode");

    StepOutcome out = execute(*decoded, pc);
    if (out.status != StepStatus::Trapped) {
        counters_.instructions++;
        if (in_trampoline(pc))
            counters_.trampoline_instructions++;
    }
    return out;
}

StepOutcome Machine::execute(const Instruction& in, Addr pc)
{
    auto next = [&] {
        regs_.pcc.cursor = pc + kInstrSize;
        return StepOutcome{StepStatus::Executed, std::nullopt};
    };
    auto bad_reg = [&] {
        return trap(FaultKind::IllegalInstruction, pc, "bad register");
    };
    auto xok = [](uint8_t r) { return r < 8; };
    auto cok = [](uint8_t r) { return r < kNumCapRegs; };

    switch (in.op) {
    case Opcode::Halt:
        return {StepStatus::Halted, std::nullopt};

    case Opcode::Yield:
        regs_.pcc.cursor = pc + kInstrSize;
        return {StepStatus::Yielded, std::nullopt};

    case Opcode::Li:
        if (!xok(in.rd))
            return bad_reg();
        regs_.x[in.rd] = Word(int64_t(in.imm));
        return next();

    case Opcode::Add:
    case Opcode::Sub:
        if (!xok(in.rd) || !xok(in.rs1) || !xok(in.rs2))
            return bad_reg();
        regs_.x[in.rd] = in.op == Opcode::Add
                             ? regs_.x[in.rs1] + regs_.x[in.rs2]
                             : regs_.x[in.rs1] - regs_.x[in.rs2];
        return next();

    case Opcode::Beq:
    case Opcode::Bne: {
        if (!xok(in.rs1) || !xok(in.rs2))
            return bad_reg();
        bool eq = regs_.x[in.rs1] == regs_.x[in.rs2];
        bool taken = in.op == Opcode::Beq ? eq : !eq;
        regs_.pcc.cursor = taken ? Addr(int64_t(pc) + in.imm) : pc + kInstrSize;
        return {StepStatus::Executed, std::nullopt};
    }

    case Opcode::CMove:
        if (!cok(in.rd) || !cok(in.rs1) || in.rd == CREG_PCC)
            return bad_reg();
        if (in.rs1 == CREG_PCC) {
            Capability v = regs_.pcc;
            v.cursor = pc;
            regs_.cap(in.rd) = v;
        } else {
            regs_.cap(in.rd) = regs_.cap(in.rs1);
        }
        return next();

    case Opcode::CIncOffset:
    case Opcode::CIncOffsetReg: {
        if (!cok(in.rd) || !cok(in.rs1) || in.rd == CREG_PCC ||
            in.rs1 == CREG_PCC)
            return bad_reg();
        if (in.op == Opcode::CIncOffsetReg && !xok(in.rs2))
            return bad_reg();
        Capability v = regs_.cap(in.rs1);
        if (!insecure_ && v.tag && v.sealed())
            return trap(FaultKind::SealViolation, pc, "cincoffset on sentry");
        int64_t delta = in.op == Opcode::CIncOffset
                            ? int64_t(in.imm)
                            : int64_t(regs_.x[in.rs2]);
        v.cursor = Addr(int64_t(v.cursor) + delta);
        regs_.cap(in.rd) = v;
        return next();
    }

    case Opcode::CSetBounds: {
        if (!cok(in.rd) || !cok(in.rs1) || !xok(in.rs2) ||
            in.rd == CREG_PCC || in.rs1 == CREG_PCC)
            return bad_reg();
        const Capability& src = regs_.cap(in.rs1);
        Addr len = Addr(regs_.x[in.rs2]);
        if (insecure_) {
            Capability v = src;
            v.base = src.cursor;
            v.length = len;
            regs_.cap(in.rd) = v;
            return next();
        }
        CapResult r = derive_set_bounds(src, src.cursor, len);
        if (!r.ok())
            return trap(fault_of(r.err), pc, "csetbounds");
        regs_.cap(in.rd) = r.cap;
        return next();
    }

    case Opcode::CAndPerm: {
        if (!cok(in.rd) || !cok(in.rs1) || in.rd == CREG_PCC ||
            in.rs1 == CREG_PCC)
            return bad_reg();
        if (insecure_) {
            Capability v = regs_.cap(in.rs1);
            v.perms &= uint8_t(in.imm) & PERM_ALL;
            regs_.cap(in.rd) = v;
            return next();
        }
        CapResult r = derive_and_perms(regs_.cap(in.rs1), uint8_t(in.imm));
        if (!r.ok())
            return trap(fault_of(r.err), pc, "candperm");
        regs_.cap(in.rd) = r.cap;
        return next();
    }

    case Opcode::CSealEntry: {
        if (!cok(in.rd) || !cok(in.rs1) || in.rd == CREG_PCC ||
            in.rs1 == CREG_PCC)
            return bad_reg();
        if (insecure_) {
            Capability v = regs_.cap(in.rs1);
            v.seal = Seal::Sentry;
            regs_.cap(in.rd) = v;
            return next();
        }
        CapResult r = seal_sentry(regs_.cap(in.rs1));
        if (!r.ok())
            return trap(fault_of(r.err), pc, "csealentry");
        regs_.cap(in.rd) = r.cap;
        return next();
    }

    case Opcode::Clc: {
        if (!cok(in.rd) || !cok(in.rs1) || in.rd == CREG_PCC)
            return bad_reg();
        const Capability& base = regs_.cap(in.rs1);
        int64_t off = int64_t(in.imm) * kCapSize;
        auto r = load_cap(mem_, base, off, insecure_);
        if (!r.ok())
            return trap(*r.fault, pc, "clc");
        if (!insecure_ && !r.value.tag)
            return trap(FaultKind::TagViolation, pc, "clc: untagged slot");
        regs_.cap(in.rd) = r.value;
        return next();
    }

    case Opcode::Clcr: {
        if (!cok(in.rd) || !cok(in.rs1) || in.rd == CREG_PCC)
            return bad_reg();
        auto r = load_cap(mem_, regs_.cap(in.rs1), in.imm, insecure_);
        if (!r.ok())
            return trap(*r.fault, pc, "clcr");
        regs_.cap(in.rd) = r.value;
        return next();
    }

    case Opcode::Cscr: {
        if (!cok(in.rd) || !cok(in.rs1))
            return bad_reg();
        const Capability& value =
            in.rd == CREG_PCC ? regs_.pcc : regs_.cap(in.rd);
        auto f = store_cap(mem_, regs_.cap(in.rs1), in.imm, value, insecure_);
        if (f)
            return trap(*f, pc, "cscr");
        return next();
    }

    case Opcode::Clw: {
        if (!xok(in.rd) || !cok(in.rs1))
            return bad_reg();
        auto r = load_word(mem_, regs_.cap(in.rs1), in.imm, insecure_);
        if (!r.ok())
            return trap(*r.fault, pc, "clw");
        regs_.x[in.rd] = r.value;
        return next();
    }

    case Opcode::Csw: {
        if (!xok(in.rd) || !cok(in.rs1))
            return bad_reg();
        auto f = store_word(mem_, regs_.cap(in.rs1), in.imm, regs_.x[in.rd],
                            insecure_);
        if (f)
            return trap(*f, pc, "csw");
        return next();
    }

    case Opcode::CJalr:
    case Opcode::CRet: {
        uint8_t src = in.op == Opcode::CRet ? uint8_t(CREG_CRA) : in.rs1;
        if (!cok(src) || src == CREG_PCC)
            return bad_reg();
        Capability target = regs_.cap(src);
        if (!insecure_) {
            if (!target.tag)
                return trap(FaultKind::TagViolation, pc, "jump");
            if (!target.has(PERM_EXECUTE))
                return trap(FaultKind::PermViolation, pc, "jump");
        }
        if (in.op == Opcode::CJalr) {
            Capability ret = regs_.pcc;
            ret.cursor = pc + kInstrSize;
            ret.seal = Seal::Sentry;
            regs_.cra = ret;
        }
        target.seal = Seal::Unsealed;  // sentries unseal atomically on jump
        regs_.pcc = target;
        return {StepStatus::Executed, std::nullopt};
    }

    case Opcode::TrapIf:
        if (!xok(in.rs1))
            return bad_reg();
        if (regs_.x[in.rs1] != 0 && !insecure_)
            return trap(FaultKind::IllegalInstruction, pc,
                        "trapif code=" + std::to_string(in.imm));
        return next();

    case Opcode::GetCompId:
        if (!xok(in.rd))
            return bad_reg();
        regs_.x[in.rd] = Word(int64_t(compid_));
        return next();

    case Opcode::SetCompId:
        if (!xok(in.rs1))
            return bad_reg();
        compid_ = int(int64_t(regs_.x[in.rs1]));
        return next();

    case Opcode::CGetAddr:
    case Opcode::CGetBase:
    case Opcode::CGetLen: {
        if (!xok(in.rd) || !cok(in.rs1))
            return bad_reg();
        const Capability& v = regs_.cap(in.rs1);
        regs_.x[in.rd] = in.op == Opcode::CGetAddr  ? v.cursor
                         : in.op == Opcode::CGetBase ? v.base
                                                     : v.length;
        return next();
    }

    case Opcode::kCount:
        break;
    }
    return trap(FaultKind::IllegalInstruction, pc, "bad opcode");
}

RunResult Machine::run(uint64_t max_steps)
{
    for (uint64_t i = 0; i < max_steps; ++i) {
        StepOutcome out = step();
        switch (out.status) {
        case StepStatus::Executed:
            break;
        case StepStatus::Halted:
            return {RunStatus::Halted, std::nullopt, counters_};
        case StepStatus::Yielded:
            return {RunStatus::Yielded, std::nullopt, counters_};
        case StepStatus::Trapped:
            return {RunStatus::Trapped, out.fault, counters_};
        }
    }
    return {RunStatus::BudgetExhausted, std::nullopt, counters_};
}

}  // namespace compartos
