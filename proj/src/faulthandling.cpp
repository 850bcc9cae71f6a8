#include "compartos/faulthandling.hpp"

#include <sstream>

namespace compartos {

namespace {

constexpr uint64_t kHandlerStepBudget = 100000;
constexpr Addr kHandlerStackSize = 512;

const Trampoline* trampoline_at(const LinkedSystem& sys, Addr pc)
{
    for (const Trampoline& t : sys.trampolines())
        if (pc >= t.base && pc < t.base + t.size)
            return &t;
    return nullptr;
}

}  // namespace

std::string format_fault_event(const FaultEvent& ev)
{
    std::ostringstream os;
    os << "fault kind=" << fault_kind_name(ev.record.kind)
       << " comp=" << ev.compartment << " strategy=" << strategy_name(ev.strategy)
       << " action=" << ev.action << " cost=" << ev.recovery_cost
       << " task=" << (ev.task_dead ? "dead" : "resumed");
    return os.str();
}

std::string FaultLog::to_text() const
{
    std::string out;
    for (const FaultEvent& ev : events_)
        out += format_fault_event(ev) + "\n";
    return out;
}

uint64_t entry_depth(const Machine& machine)
{
    const Capability& ctx = machine.regs().ctx;
    if (!ctx.tag || ctx.cursor <= ctx.base)
        return 0;
    return (ctx.cursor - ctx.base) / kCapSize;
}

uint64_t kill_compartment(LinkedSystem& sys, Compartment& comp)
{
    TaggedMemory& mem = sys.machine().memory();
    uint64_t cost = 0;
    const Region& ct = comp.captable();
    for (Addr a = ct.base; a < ct.base + ct.size; a += kCapSize) {
        mem.clear_tag(a);
        ++cost;
    }
    for (const Trampoline& t : sys.trampolines()) {
        if (t.callee_id != comp.id)
            continue;
        mem.clear_tag(t.func_slot_addr);
        mem.clear_tag(t.captable_slot_addr);
        cost += 2;
    }
    comp.killed = true;
    sys.machine().charge_trap_instructions(cost);
    return cost;
}

uint64_t micro_reboot(LinkedSystem& sys, Compartment& comp)
{
    TaggedMemory& mem = sys.machine().memory();
    uint64_t cost = 0;
    for (const auto& [name, bytes] : comp.snapshot) {
        const Region* reg = comp.region(name);
        mem.write_bytes(reg->base, bytes);
        cost += bytes.size() / 8;
    }
    // re-derive the compartment's own slots
    for (const Symbol& sym : comp.symbols) {
        Capability cap = sys.symbol_capability(comp, sym);
        if (sym.is_function) {
            CapResult s = seal_sentry(cap);
            cap = s.cap;
        }
        sys.write_captable_slot(comp, *comp.slot_index(sym.name), cap);
        ++cost;
    }
    // re-install outgoing entries and inbound trampoline metadata
    for (const Trampoline& t : sys.trampolines()) {
        if (t.caller_id == comp.id) {
            if (auto slot = comp.slot_index(t.symbol)) {
                sys.write_captable_slot(comp, *slot, t.entry);
                ++cost;
            }
        }
        if (t.callee_id == comp.id) {
            CapResult f =
                seal_sentry(sys.function_capability(comp, t.symbol));
            mem.write_cap(t.func_slot_addr, f.cap);
            mem.write_cap(t.captable_slot_addr, sys.captable_capability(comp));
            cost += 2;
        }
    }
    comp.killed = false;
    sys.machine().charge_trap_instructions(cost);
    return cost;
}

Continuation apply_return_error(LinkedSystem& sys, FaultLog& log,
                                const FaultRecord& fault)
{
    Machine& m = sys.machine();
    TaggedMemory& mem = m.memory();
    RegisterFile& regs = m.regs();

    auto escalate = [&](const char* why) -> Continuation {
        uint64_t cost = 0;
        Compartment* comp = sys.find_compartment(m.compartment_id());
        if (comp && !comp->killed)
            cost = kill_compartment(sys, *comp);
        log.append(FaultEvent{fault, comp ? comp->name : "-",
                              comp ? comp->strategy : StrategyKind::ReturnError,
                              std::string("kill(escalated: ") + why + ")", cost,
                              true});
        return Continuation{false, true, cost};
    };

    if (entry_depth(m) == 0)
        return Continuation{false, true, 0};

    uint64_t cost = 0;
    Addr slot_addr = regs.ctx.cursor - kCapSize;
    if (!mem.granule_tag(slot_addr))
        return escalate("trusted frame untagged");
    Capability frame = mem.read_cap(slot_addr);
    ++cost;
    Addr fb = frame.cursor;
    if (!frame.tag || !mem.granule_tag(fb) || !mem.granule_tag(fb + 16))
        return escalate("save area corrupted");

    Capability cra = mem.read_cap(fb + 0);
    Capability cgp = mem.read_cap(fb + 16);
    cost += 2;
    if (!cra.tag || !cra.has(PERM_EXECUTE))
        return escalate("saved return sentry corrupted");

    for (uint8_t i = 1; i < 8; ++i) {  // c0 is the (cleared) return register
        regs.c[i] = mem.read_cap(fb + 32 + 16 * i);
        ++cost;
    }
    for (uint8_t i = 1; i < 8; ++i) {  // x0 carries the error code
        regs.x[i] = mem.read_word(fb + 160 + 8 * i);
        ++cost;
    }
    Word saved_compid = mem.read_word(fb + 224);
    ++cost;

    regs.c[0] = Capability{};
    regs.x[0] = kFaultErrorCode;
    regs.cra = cra;
    regs.cgp = cgp;
    regs.csp = with_cursor(frame, fb + kTrampolineFrameSize);
    regs.ctx.cursor = slot_addr;
    Capability resume = cra;
    resume.seal = Seal::Unsealed;
    regs.pcc = resume;
    m.set_compartment_id(int(int64_t(saved_compid)));
    cost += 6;

    m.charge_trap_instructions(cost);
    return Continuation{true, false, cost};
}

namespace {

// Run the compartment's registered handler on a fresh bounded stack, in
// the compartment's own domain. Instructions it executes are re-billed
// as recovery cost. Returns false if the handler itself misbehaved.
bool run_custom_handler(LinkedSystem& sys, Compartment& comp,
                        const FaultRecord& fault, uint64_t& cost_out)
{
    Machine& m = sys.machine();
    if (comp.handler_stack.size == 0) {
        Region r = sys.allocate(kHandlerStackSize, ".hstack." + comp.name);
        CapResult p = derive_and_perms(
            r.cap, PERM_LOAD | PERM_STORE | PERM_LOAD_CAP | PERM_STORE_CAP);
        r.cap = with_cursor(p.cap, r.base + r.size);
        comp.handler_stack = r;
    }

    RegisterFile saved = m.regs();
    int saved_compid = m.compartment_id();

    RegisterFile& regs = m.regs();
    regs = RegisterFile{};
    regs.pcc = sys.function_capability(comp, comp.handler_symbol);
    regs.cgp = sys.captable_capability(comp);
    regs.csp = comp.handler_stack.cap;
    regs.cra = sys.exit_sentry();
    regs.x[0] = Word(uint64_t(fault.kind));
    m.set_compartment_id(comp.id);

    uint64_t before = m.counters().instructions;
    RunResult res = m.run(kHandlerStepBudget);
    uint64_t delta = m.counters().instructions - before;
    m.counters().instructions = before;  // re-billed below as recovery
    m.charge_trap_instructions(delta);
    cost_out = delta;

    m.regs() = saved;
    m.set_compartment_id(saved_compid);
    return res.status == RunStatus::Halted;
}

}  // namespace

Continuation dispatch_fault(LinkedSystem& sys, const FaultRecord& fault,
                            FaultLog& log)
{
    Machine& m = sys.machine();

    // A trap inside trampoline code is a switcher-level event: either a
    // killed callee's cleared metadata or a corrupted trusted frame. The
    // faulting compartment's own strategy does not apply; the caller just
    // gets an error back.
    if (const Trampoline* t = trampoline_at(sys, fault.pc)) {
        Compartment* callee = sys.find_compartment(t->callee_id);
        Continuation c = apply_return_error(sys, log, fault);
        log.append(FaultEvent{fault, callee ? callee->name : "-",
                              callee ? callee->strategy
                                     : StrategyKind::ReturnError,
                              c.resumed ? "return_error(switch)" : "task_dead",
                              c.recovery_cost, c.task_dead});
        return c;
    }

    Compartment* comp = sys.find_compartment(m.compartment_id());
    if (!comp) {
        log.append(FaultEvent{fault, "-", StrategyKind::ReturnError,
                              "task_dead", 0, true});
        return Continuation{false, true, 0};
    }

    StrategyKind strategy = comp->strategy;
    uint64_t side_cost = 0;
    std::string action;

    switch (strategy) {
    case StrategyKind::ReturnError:
        action = "return_error";
        break;
    case StrategyKind::Kill:
        side_cost = kill_compartment(sys, *comp);
        action = "kill";
        break;
    case StrategyKind::MicroReboot:
        side_cost = micro_reboot(sys, *comp);
        action = "micro_reboot";
        break;
    case StrategyKind::CustomHandler: {
        uint64_t handler_cost = 0;
        if (run_custom_handler(sys, *comp, fault, handler_cost)) {
            side_cost = handler_cost;
            action = "custom_handler";
        } else {
            side_cost = handler_cost + kill_compartment(sys, *comp);
            action = "custom_handler->kill(handler fault)";
        }
        break;
    }
    }

    if (entry_depth(m) == 0) {
        log.append(FaultEvent{fault, comp->name, strategy,
                              action + "+task_dead", side_cost, true});
        return Continuation{false, true, side_cost};
    }

    Continuation c = apply_return_error(sys, log, fault);
    c.recovery_cost += side_cost;
    log.append(FaultEvent{fault, comp->name, strategy,
                          c.resumed ? action + "+return_error" : action,
                          c.recovery_cost, c.task_dead});
    return c;
}

}  // namespace compartos
