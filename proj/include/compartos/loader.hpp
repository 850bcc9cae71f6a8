#pragma once

#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "compartos/machine.hpp"
#include "compartos/module.hpp"
#include "compartos/policy.hpp"

namespace compartos {

inline constexpr Addr kTrampolineFrameSize = 256;
inline constexpr Addr kTrampolineMetaSize = 3 * kCapSize;  // .Lfunc .Lcaptable .Lcompid

// x0 on a fault-unwound return; interfaces under test return smaller values.
inline constexpr Word kFaultErrorCode = ~Word(0);

enum class LoaderErrorKind {
    ValidationFailed,
    OutOfMemory,
    DuplicateCompartmentName,
    UnresolvedRequiredSymbol,
    LinkError,
    UnknownSymbol,
    PermViolation,
};

class LoaderError : public std::runtime_error {
public:
    LoaderError(LoaderErrorKind kind, const std::string& what)
        : std::runtime_error(what), kind_(kind)
    {
    }
    LoaderErrorKind kind() const { return kind_; }

private:
    LoaderErrorKind kind_;
};

struct Region {
    std::string name;
    Addr base = 0;
    Addr size = 0;
    Capability cap;  // restricted per the section permission rules
};

enum class SlotClass : uint8_t { Local, Global, Interface, External };

const char* slot_class_name(SlotClass cls);

struct CaptableSlot {
    std::string symbol;
    SlotClass cls = SlotClass::Local;
    uint32_t index = 0;
};

struct Compartment {
    int id = 0;
    std::string name;
    std::vector<Region> regions;  // .text .rodata .data .bss .captable ...
    std::vector<CaptableSlot> slots;  // slot 0 is the untagged canary
    std::vector<Symbol> symbols;      // merged across grouped modules

    StrategyKind strategy = StrategyKind::ReturnError;
    std::string handler_symbol;  // CustomHandler only
    bool bound_stack = true;
    bool scrub_stack = false;

    // post-load byte image of .data and .bss
    std::vector<std::pair<std::string, std::vector<uint8_t>>> snapshot;
    bool killed = false;

    // allocated on first custom-handler dispatch (size stays 0 until then)
    Region handler_stack;

    const Region* region(const std::string& name) const;
    const Region& captable() const;
    const Symbol* find_symbol(const std::string& name) const;
    std::optional<uint32_t> slot_index(const std::string& symbol) const;
};

struct Trampoline {
    Addr base = 0;
    Addr size = 0;
    int caller_id = -1;  // -1 for wrapped function pointers
    int callee_id = 0;
    std::string symbol;
    Capability entry;  // sentry; the only thing callers ever hold
    Addr func_slot_addr = 0;
    Addr captable_slot_addr = 0;
};

struct LinkEdge {
    std::string caller;
    std::string callee;
    std::string symbol;
};

// The secure loader: creates compartments from module images, builds
// per-compartment captables, mints cross-compartment sentries per policy,
// and emits switch trampolines. Holds the root capability; compartments
// never receive it.
class LinkedSystem {
public:
    explicit LinkedSystem(Machine& machine);

    Machine& machine() { return *machine_; }
    const Machine& machine() const { return *machine_; }
    const Capability& root() const { return root_; }

    Compartment& load_compartment(const std::vector<ModuleImage>& images,
                                  const CompartmentDecl& decl);
    void link_all(const SecurityPolicy& policy);
    void register_handlers();

    Trampoline& emit_trampoline(const Compartment* caller, Compartment& callee,
                                const std::string& symbol);
    Capability wrap_function_pointer(const Capability& cap, Compartment& owner);

    Region allocate(Addr size, const std::string& name);

    Compartment* find_compartment(const std::string& name);
    Compartment* find_compartment(int id);
    const std::vector<std::unique_ptr<Compartment>>& compartments() const
    {
        return compartments_;
    }
    const std::vector<Trampoline>& trampolines() const { return trampolines_; }
    const std::vector<LinkEdge>& edges() const { return edges_; }
    const std::vector<std::string>& diagnostics() const { return diagnostics_; }

    const Capability& exit_sentry() const { return exit_sentry_; }
    Addr exit_gate_base() const { return exit_gate_.base; }

    // unsealed executable capability for a defined function symbol
    Capability function_capability(const Compartment& comp,
                                   const std::string& symbol) const;
    Capability captable_capability(const Compartment& comp) const;

private:
    friend uint64_t kill_compartment(LinkedSystem&, Compartment&);
    friend uint64_t micro_reboot(LinkedSystem&, Compartment&);

    Capability symbol_capability(const Compartment& comp, const Symbol& sym) const;
    void write_captable_slot(const Compartment& comp, uint32_t index,
                             const Capability& cap);

    Machine* machine_;
    Capability root_;
    Addr next_free_ = 0;
    Region exit_gate_;
    Capability exit_sentry_;
    std::vector<std::unique_ptr<Compartment>> compartments_;
    std::vector<Trampoline> trampolines_;
    std::vector<LinkEdge> edges_;
    std::vector<std::string> diagnostics_;
    int next_id_ = 1;
};

using ModuleProvider = std::function<std::vector<ModuleImage>(const CompartmentDecl&)>;

// Loads the boot list in order, links per policy, and registers fault
// handlers. Compartments end up with no path to the loader's root.
std::unique_ptr<LinkedSystem> boot(Machine& machine, const SecurityPolicy& policy,
                                   const ModuleProvider& modules);

}  // namespace compartos
