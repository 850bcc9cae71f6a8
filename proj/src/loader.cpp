#include "compartos/loader.hpp"

#include <algorithm>
#include <cassert>
#include <set>

namespace compartos {

namespace {

constexpr Addr kFrame = kTrampolineFrameSize;

uint8_t section_perms(SectionKind kind)
{
    switch (kind) {
    case SectionKind::Code:
        return PERM_EXECUTE | PERM_LOAD;
    case SectionKind::ReadOnlyData:
        return PERM_LOAD;
    case SectionKind::Data:
    case SectionKind::ZeroFill:
        return PERM_LOAD | PERM_STORE | PERM_LOAD_CAP | PERM_STORE_CAP;
    }
    return 0;
}

Addr align16(Addr n) { return (n + 15u) & ~Addr(15); }

// Concatenate the grouped modules of one compartment into a single image.
// Each module's chunk of a section is 16-aligned so instruction boundaries
// and capability granules survive the merge.
ModuleImage merge_images(const std::vector<ModuleImage>& images,
                         const std::string& name)
{
    ModuleImage merged;
    merged.name = name;

    Section* out[4] = {nullptr, nullptr, nullptr, nullptr};
    for (const ModuleImage& img : images) {
        uint64_t chunk_base[4] = {0, 0, 0, 0};
        for (const Section& sec : img.sections) {
            size_t k = size_t(sec.kind);
            if (!out[k]) {
                merged.sections.push_back(Section{sec.kind, 0, {}});
                out[k] = &merged.sections.back();
                // vector may reallocate; refresh all cached pointers
                for (size_t i = 0; i < 4; ++i)
                    out[i] = nullptr;
                for (Section& s : merged.sections)
                    out[size_t(s.kind)] = &s;
            }
            Section& dst = *out[k];
            dst.size = align16(Addr(dst.size));
            chunk_base[k] = dst.size;
            if (sec.kind == SectionKind::ZeroFill) {
                dst.size += sec.size;
            } else {
                dst.payload.resize(dst.size, 0);
                dst.payload.insert(dst.payload.end(), sec.payload.begin(),
                                   sec.payload.end());
                dst.size = dst.payload.size();
            }
        }
        for (const Symbol& sym : img.symbols) {
            if (std::any_of(merged.symbols.begin(), merged.symbols.end(),
                            [&](const Symbol& s) { return s.name == sym.name; }))
                throw LoaderError(LoaderErrorKind::LinkError,
                                  "duplicate symbol '" + sym.name +
                                      "' across grouped modules of '" + name +
                                      "'");
            Symbol adj = sym;
            adj.offset += chunk_base[size_t(sym.section)];
            merged.symbols.push_back(adj);
        }
        for (const Relocation& rel : img.relocations) {
            Relocation adj = rel;
            adj.offset += chunk_base[size_t(rel.section)];
            merged.relocations.push_back(adj);
        }
    }
    return merged;
}

}  // namespace

const char* slot_class_name(SlotClass cls)
{
    switch (cls) {
    case SlotClass::Local:
        return "local";
    case SlotClass::Global:
        return "global";
    case SlotClass::Interface:
        return "interface";
    case SlotClass::External:
        return "external";
    }
    return "?";
}

const Region* Compartment::region(const std::string& name) const
{
    for (const Region& r : regions)
        if (r.name == name)
            return &r;
    return nullptr;
}

const Region& Compartment::captable() const
{
    const Region* r = region(".captable");
    assert(r && "compartment without a captable");
    return *r;
}

const Symbol* Compartment::find_symbol(const std::string& name) const
{
    for (const Symbol& s : symbols)
        if (s.name == name)
            return &s;
    return nullptr;
}

std::optional<uint32_t> Compartment::slot_index(const std::string& symbol) const
{
    for (const CaptableSlot& s : slots)
        if (s.index != 0 && s.symbol == symbol)
            return s.index;
    return std::nullopt;
}

LinkedSystem::LinkedSystem(Machine& machine)
    : machine_(&machine), root_(make_root_capability(machine.memory().size()))
{
    next_free_ = kCapSize;  // keep address 0 unmapped by any compartment cap
    exit_gate_ = allocate(kCapSize, ".exitgate");  // zeroed memory: one HALT
    CapResult r = derive_and_perms(exit_gate_.cap, PERM_EXECUTE);
    assert(r.ok());
    r = seal_sentry(r.cap);
    assert(r.ok());
    exit_sentry_ = r.cap;
}

Region LinkedSystem::allocate(Addr size, const std::string& name)
{
    Addr sz = align16(std::max<Addr>(size, kCapSize));
    if (uint64_t(next_free_) + sz > machine_->memory().size())
        throw LoaderError(LoaderErrorKind::OutOfMemory,
                          "out of memory allocating " + std::to_string(sz) +
                              " bytes for " + name);
    Region reg;
    reg.name = name;
    reg.base = next_free_;
    reg.size = sz;
    CapResult r = derive_set_bounds(root_, reg.base, reg.size);
    assert(r.ok());
    reg.cap = r.cap;
    next_free_ += sz;
    return reg;
}

Compartment* LinkedSystem::find_compartment(const std::string& name)
{
    for (auto& c : compartments_)
        if (c->name == name)
            return c.get();
    return nullptr;
}

Compartment* LinkedSystem::find_compartment(int id)
{
    for (auto& c : compartments_)
        if (c->id == id)
            return c.get();
    return nullptr;
}

Capability LinkedSystem::symbol_capability(const Compartment& comp,
                                           const Symbol& sym) const
{
    const Region* reg = comp.region(section_name(sym.section));
    assert(reg);
    Addr base = reg->base + Addr(sym.offset);
    Addr len = Addr(std::max<uint64_t>(sym.size, 1));
    CapResult r = derive_set_bounds(reg->cap, base, len);
    if (!r.ok())
        throw LoaderError(LoaderErrorKind::LinkError,
                          "symbol '" + sym.name + "' escapes its section");
    return r.cap;
}

Capability LinkedSystem::function_capability(const Compartment& comp,
                                             const std::string& symbol) const
{
    const Symbol* sym = comp.find_symbol(symbol);
    if (!sym || !sym->is_function)
        throw LoaderError(LoaderErrorKind::UnknownSymbol,
                          "no function '" + symbol + "' in compartment '" +
                              comp.name + "'");
    return symbol_capability(comp, *sym);
}

Capability LinkedSystem::captable_capability(const Compartment& comp) const
{
    CapResult r = derive_and_perms(comp.captable().cap, PERM_LOAD_CAP);
    assert(r.ok());
    return r.cap;
}

void LinkedSystem::write_captable_slot(const Compartment& comp, uint32_t index,
                                       const Capability& cap)
{
    machine_->memory().write_cap(comp.captable().base + index * kCapSize, cap);
}

Compartment& LinkedSystem::load_compartment(const std::vector<ModuleImage>& images,
                                            const CompartmentDecl& decl)
{
    if (find_compartment(decl.name))
        throw LoaderError(LoaderErrorKind::DuplicateCompartmentName,
                          "compartment '" + decl.name + "' already loaded");

    ModuleImage merged = merge_images(images, decl.name);
    std::vector<Diagnostic> diags = validate(merged);
    if (!diags.empty()) {
        std::string msg = "module validation failed for '" + decl.name + "':";
        for (const Diagnostic& d : diags)
            msg += "\n  " + d.message + " (" + d.context + ")";
        throw LoaderError(LoaderErrorKind::ValidationFailed, msg);
    }

    auto comp = std::make_unique<Compartment>();
    comp->id = next_id_++;
    comp->name = decl.name;
    comp->strategy = decl.strategy;
    comp->bound_stack = decl.bound_stack;
    comp->scrub_stack = decl.scrub_stack;
    comp->symbols = merged.symbols;

    for (SectionKind kind : {SectionKind::Code, SectionKind::ReadOnlyData,
                             SectionKind::Data, SectionKind::ZeroFill}) {
        const Section* sec = merged.find_section(kind);
        if (!sec || sec->size == 0)
            continue;
        Region reg = allocate(Addr(sec->size), section_name(kind));
        if (!sec->payload.empty())
            machine_->memory().write_bytes(reg.base, sec->payload);
        CapResult r = derive_and_perms(reg.cap, section_perms(kind));
        assert(r.ok());
        reg.cap = r.cap;
        comp->regions.push_back(reg);
    }

    // Slot 0 is a canary that stays untagged forever: a stray zero index
    // dereferences to a guaranteed tag violation, never to real authority.
    comp->slots.push_back(CaptableSlot{"", SlotClass::Local, 0});
    for (const Symbol& sym : merged.symbols) {
        SlotClass cls = sym.cls == SymbolClass::Local    ? SlotClass::Local
                        : sym.cls == SymbolClass::Global ? SlotClass::Global
                                                         : SlotClass::Interface;
        comp->slots.push_back(
            CaptableSlot{sym.name, cls, uint32_t(comp->slots.size())});
    }
    for (const Relocation& rel : merged.relocations) {
        if (rel.kind != RelocKind::GprelSlot)
            continue;
        if (merged.find_symbol(rel.target) || comp->slot_index(rel.target))
            continue;
        comp->slots.push_back(CaptableSlot{rel.target, SlotClass::External,
                                           uint32_t(comp->slots.size())});
    }

    Region captable =
        allocate(Addr(comp->slots.size()) * kCapSize, ".captable");
    CapResult r = derive_and_perms(captable.cap, PERM_LOAD_CAP);
    assert(r.ok());
    captable.cap = r.cap;
    comp->regions.push_back(captable);

    for (const Relocation& rel : merged.relocations) {
        const Region* site_reg = comp->region(section_name(rel.section));
        assert(site_reg);
        Addr site = site_reg->base + Addr(rel.offset);
        if (rel.kind == RelocKind::AbsInSection) {
            const Symbol* target = merged.find_symbol(rel.target);
            assert(target && "validate() guarantees ABS targets are defined");
            const Region* treg = comp->region(section_name(target->section));
            machine_->memory().write_word(site,
                                          treg->base + Addr(target->offset));
        } else {
            std::optional<uint32_t> slot = comp->slot_index(rel.target);
            assert(slot.has_value());
            uint32_t imm = *slot;
            uint8_t le[4] = {uint8_t(imm), uint8_t(imm >> 8), uint8_t(imm >> 16),
                             uint8_t(imm >> 24)};
            machine_->memory().write_bytes(site + 4, le);
        }
    }

    for (const Symbol& sym : merged.symbols) {
        Capability cap = symbol_capability(*comp, sym);
        if (sym.is_function) {
            CapResult s = seal_sentry(cap);
            assert(s.ok());
            cap = s.cap;
        }
        write_captable_slot(*comp, *comp->slot_index(sym.name), cap);
    }

    for (const char* name : {".data", ".bss"}) {
        const Region* reg = comp->region(name);
        if (!reg)
            continue;
        std::vector<uint8_t> bytes(reg->size);
        machine_->memory().read_bytes(reg->base, bytes);
        comp->snapshot.emplace_back(name, std::move(bytes));
    }

    compartments_.push_back(std::move(comp));
    return *compartments_.back();
}

// The switch trampoline. Loader-emitted, never part of any compartment.
// Layout: 48 bytes of metadata (the callee's entry sentry, its captable
// root, and an untagged capability whose cursor is the callee id), then
// code. Callers only ever hold a sentry to the code, so the metadata is
// reachable solely through PCC-derived loads inside the trampoline itself.
Trampoline& LinkedSystem::emit_trampoline(const Compartment* caller,
                                          Compartment& callee,
                                          const std::string& symbol)
{
    Capability func = function_capability(callee, symbol);
    CapResult sealed = seal_sentry(func);
    assert(sealed.ok());

    std::vector<Instruction> code;
    auto emit = [&](Opcode op, uint8_t rd, uint8_t rs1, uint8_t rs2,
                    int32_t imm) {
        code.push_back(Instruction{op, rd, rs1, rs2, imm});
    };

    // --- save the caller's activation into a 256-byte stack frame ---
    emit(Opcode::CIncOffset, CREG_CSP, CREG_CSP, 0, -int32_t(kFrame));
    emit(Opcode::Cscr, CREG_CRA, CREG_CSP, 0, 0);
    emit(Opcode::Cscr, CREG_CGP, CREG_CSP, 0, 16);
    for (uint8_t i = 0; i < 8; ++i)
        emit(Opcode::Cscr, i, CREG_CSP, 0, 32 + 16 * i);
    for (uint8_t i = 0; i < 8; ++i)
        emit(Opcode::Csw, i, CREG_CSP, 0, 160 + 8 * i);
    emit(Opcode::GetCompId, 7, 0, 0, 0);
    emit(Opcode::Csw, 7, CREG_CSP, 0, 224);
    // push the frame capability onto the trusted context stack
    emit(Opcode::Cscr, CREG_CSP, CREG_CTX, 0, 0);
    emit(Opcode::CIncOffset, CREG_CTX, CREG_CTX, 0, kCapSize);

    // --- load the callee's metadata through PCC; first load after a kill
    // traps right here ---
    size_t idx_cmove = code.size();
    emit(Opcode::CMove, 4, CREG_PCC, 0, 0);
    emit(Opcode::CIncOffset, 4, 4, 0,
         -int32_t(kTrampolineMetaSize + kInstrSize * idx_cmove));
    emit(Opcode::Clc, 5, 4, 0, 0);   // callee entry sentry
    emit(Opcode::Clc, 6, 4, 0, 1);   // callee captable root
    emit(Opcode::Clcr, 7, 4, 0, 32); // callee id (untagged by construction)
    emit(Opcode::CGetAddr, 7, 7, 0, 0);
    emit(Opcode::CMove, CREG_CGP, 6, 0, 0);
    emit(Opcode::SetCompId, 0, 7, 0, 0);

    if (callee.bound_stack) {
        // shrink CSP to [stack base, frame base): the callee cannot read
        // or overwrite the caller's frames
        emit(Opcode::CGetBase, 4, CREG_CSP, 0, 0);
        emit(Opcode::CGetAddr, 5, CREG_CSP, 0, 0);
        emit(Opcode::Sub, 6, 5, 4, 0);             // x6 = callee stack length
        emit(Opcode::Sub, 5, 4, 5, 0);             // x5 = -(length)
        emit(Opcode::CIncOffsetReg, CREG_CSP, CREG_CSP, 5, 0);
        emit(Opcode::CSetBounds, CREG_CSP, CREG_CSP, 6, 0);
        if (callee.scrub_stack) {
            // zero the callee's stack window before handing it over
            emit(Opcode::Li, 5, 0, 0, 0);
            emit(Opcode::Add, 4, 6, 5, 0);          // x4 = bytes left
            emit(Opcode::Li, 6, 0, 0, 8);
            emit(Opcode::Beq, 0, 4, 5, 5 * kInstrSize);
            emit(Opcode::Csw, 5, CREG_CSP, 0, 0);
            emit(Opcode::CIncOffset, CREG_CSP, CREG_CSP, 0, 8);
            emit(Opcode::Sub, 4, 4, 6, 0);
            emit(Opcode::Beq, 0, 5, 5, -4 * kInstrSize);
            // CSP cursor is now at the window top, where it belongs
        } else {
            emit(Opcode::CIncOffsetReg, CREG_CSP, CREG_CSP, 6, 0);
        }
    }

    emit(Opcode::CJalr, 0, 5, 0, 0);

    // --- return path: pop the trusted frame and restore the caller ---
    emit(Opcode::CIncOffset, CREG_CTX, CREG_CTX, 0, -int32_t(kCapSize));
    emit(Opcode::Clc, CREG_CSP, CREG_CTX, 0, 0);
    emit(Opcode::Clw, 7, CREG_CSP, 0, 224);
    emit(Opcode::SetCompId, 0, 7, 0, 0);
    for (uint8_t i = 1; i < 8; ++i)  // x0 carries the return value
        emit(Opcode::Clw, i, CREG_CSP, 0, 160 + 8 * i);
    // c0 carries the return capability; Clcr because a register that was
    // untagged at save time must restore untagged, not trap
    for (uint8_t i = 1; i < 8; ++i)
        emit(Opcode::Clcr, i, CREG_CSP, 0, 32 + 16 * i);
    emit(Opcode::Clc, CREG_CGP, CREG_CSP, 0, 1);
    emit(Opcode::Clc, CREG_CRA, CREG_CSP, 0, 0);
    emit(Opcode::CIncOffset, CREG_CSP, CREG_CSP, 0, int32_t(kFrame));
    emit(Opcode::CRet, 0, 0, 0, 0);

    Addr code_size = Addr(code.size()) * kInstrSize;
    Region reg = allocate(kTrampolineMetaSize + code_size,
                          ".tramp." + callee.name + "." + symbol);

    TaggedMemory& mem = machine_->memory();
    Addr code_base = reg.base + kTrampolineMetaSize;
    for (size_t i = 0; i < code.size(); ++i)
        mem.write_bytes(code_base + Addr(i) * kInstrSize,
                        encode_instruction(code[i]));
    mem.write_cap(reg.base, sealed.cap);
    mem.write_cap(reg.base + kCapSize, captable_capability(callee));
    Capability compid_cap;  // untagged; only the cursor carries information
    compid_cap.cursor = Addr(callee.id);
    mem.write_cap(reg.base + 2 * kCapSize, compid_cap);
    mem.clear_tag(reg.base + 2 * kCapSize);

    CapResult region_cap =
        derive_and_perms(reg.cap, PERM_EXECUTE | PERM_LOAD_CAP);
    assert(region_cap.ok());
    CapResult entry = seal_sentry(with_cursor(region_cap.cap, code_base));
    assert(entry.ok());

    machine_->add_trampoline_range(reg.base, reg.size);

    Trampoline t;
    t.base = reg.base;
    t.size = reg.size;
    t.caller_id = caller ? caller->id : -1;
    t.callee_id = callee.id;
    t.symbol = symbol;
    t.entry = entry.cap;
    t.func_slot_addr = reg.base;
    t.captable_slot_addr = reg.base + kCapSize;
    trampolines_.push_back(t);
    return trampolines_.back();
}

Capability LinkedSystem::wrap_function_pointer(const Capability& cap,
                                               Compartment& owner)
{
    if (!cap.tag || !cap.has(PERM_EXECUTE))
        throw LoaderError(LoaderErrorKind::PermViolation,
                          "wrap_function_pointer: not an executable capability");
    // find which function symbol the capability denotes
    for (const Symbol& sym : owner.symbols) {
        if (!sym.is_function)
            continue;
        Capability have = function_capability(owner, sym.name);
        if (have.base == cap.base && have.length == cap.length)
            return emit_trampoline(nullptr, owner, sym.name).entry;
    }
    throw LoaderError(LoaderErrorKind::UnknownSymbol,
                      "wrap_function_pointer: capability matches no function "
                      "of compartment '" +
                          owner.name + "'");
}

void LinkedSystem::link_all(const SecurityPolicy& policy)
{
    for (auto& caller : compartments_) {
        for (const CaptableSlot& slot : caller->slots) {
            if (slot.cls != SlotClass::External)
                continue;
            std::vector<Compartment*> candidates;
            for (auto& other : compartments_) {
                if (other.get() != caller.get() &&
                    other->find_symbol(slot.symbol))
                    candidates.push_back(other.get());
            }
            if (candidates.empty())
                throw LoaderError(LoaderErrorKind::UnresolvedRequiredSymbol,
                                  "no compartment defines '" + slot.symbol +
                                      "' required by '" + caller->name + "'");
            bool linked = false;
            bool any_allowed = false;
            for (Compartment* callee : candidates) {
                if (!policy.allows(caller->name, callee->name, slot.symbol))
                    continue;
                any_allowed = true;
                const Symbol* sym = callee->find_symbol(slot.symbol);
                if (sym->cls != SymbolClass::Interface) {
                    diagnostics_.push_back(
                        "'" + slot.symbol + "' in '" + callee->name +
                        "' is " + symbol_class_name(sym->cls) +
                        ", not interface; no capability minted for '" +
                        caller->name + "'");
                    continue;
                }
                Trampoline& t =
                    emit_trampoline(caller.get(), *callee, slot.symbol);
                write_captable_slot(*caller, slot.index, t.entry);
                edges_.push_back({caller->name, callee->name, slot.symbol});
                linked = true;
                break;
            }
            if (!linked && !any_allowed)
                diagnostics_.push_back("policy denies '" + caller->name +
                                       "' -> '" + slot.symbol +
                                       "'; slot left untagged");
            // denied or non-interface: the slot keeps its untagged zeros,
            // so any use traps instead of escalating
        }
    }
}

void LinkedSystem::register_handlers()
{
    for (auto& comp : compartments_) {
        const Symbol* h = comp->find_symbol(kFaultHandlerSymbol);
        if (h && h->is_function) {
            comp->strategy = StrategyKind::CustomHandler;
            comp->handler_symbol = kFaultHandlerSymbol;
        } else if (comp->strategy == StrategyKind::CustomHandler) {
            throw LoaderError(LoaderErrorKind::LinkError,
                              "compartment '" + comp->name +
                                  "' declares strategy=custom but defines no " +
                                  kFaultHandlerSymbol);
        }
    }
}

std::unique_ptr<LinkedSystem> boot(Machine& machine, const SecurityPolicy& policy,
                                   const ModuleProvider& modules)
{
    auto sys = std::make_unique<LinkedSystem>(machine);
    std::vector<std::string> order = policy.boot_order;
    if (order.empty())
        for (const CompartmentDecl& d : policy.compartments)
            order.push_back(d.name);
    for (const std::string& name : order) {
        const CompartmentDecl* decl = policy.find(name);
        if (!decl)
            throw LoaderError(LoaderErrorKind::LinkError,
                              "boot order names unknown compartment '" + name +
                                  "'");
        sys->load_compartment(modules(*decl), *decl);
    }
    sys->link_all(policy);
    sys->register_handlers();
    return sys;
}

}  // namespace compartos
