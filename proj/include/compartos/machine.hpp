#pragma once

#include <array>
#include <optional>
#include <vector>

#include "compartos/capability.hpp"
#include "compartos/fault.hpp"
#include "compartos/isa.hpp"
#include "compartos/memory.hpp"

namespace compartos {

struct RegisterFile {
    Capability pcc;
    Capability cgp;  // current compartment's captable root; the GPREL path
    Capability csp;
    Capability cra;
    Capability ctx;  // trusted context stack, set per task by the runtime
    std::array<Capability, 8> c{};
    std::array<Word, 8> x{};

    Capability& cap(uint8_t idx);
    const Capability& cap(uint8_t idx) const;

    bool operator==(const RegisterFile&) const = default;
};

struct CostCounters {
    uint64_t instructions = 0;
    uint64_t trampoline_instructions = 0;
    uint64_t trap_instructions = 0;
};

enum class StepStatus { Executed, Trapped, Halted, Yielded };

struct StepOutcome {
    StepStatus status = StepStatus::Executed;
    std::optional<FaultRecord> fault;
};

enum class RunStatus { Halted, Trapped, BudgetExhausted, Yielded };

struct RunResult {
    RunStatus status = RunStatus::Halted;
    std::optional<FaultRecord> fault;
    CostCounters counters;
};

const char* run_status_name(RunStatus s);

// Checked memory access. Check order is fixed: Tag, Seal, Perm, Bounds.
template <typename T>
struct Checked {
    T value{};
    std::optional<FaultKind> fault;
    bool ok() const { return !fault.has_value(); }
};

Checked<Word> load_word(const TaggedMemory& mem, const Capability& cap,
                        int64_t offset, bool insecure = false);
std::optional<FaultKind> store_word(TaggedMemory& mem, const Capability& cap,
                                    int64_t offset, Word value,
                                    bool insecure = false);
Checked<Capability> load_cap(const TaggedMemory& mem, const Capability& cap,
                             int64_t offset, bool insecure = false);
std::optional<FaultKind> store_cap(TaggedMemory& mem, const Capability& cap,
                                   int64_t offset, const Capability& value,
                                   bool insecure = false);

// Single-threaded tagged-capability machine over the toy ISA.
class Machine {
public:
    explicit Machine(Addr memory_size, bool insecure = false);

    TaggedMemory& memory() { return mem_; }
    const TaggedMemory& memory() const { return mem_; }
    RegisterFile& regs() { return regs_; }
    const RegisterFile& regs() const { return regs_; }

    int compartment_id() const { return compid_; }
    void set_compartment_id(int id) { compid_ = id; }

    CostCounters& counters() { return counters_; }
    const CostCounters& counters() const { return counters_; }
    void charge_trap_instructions(uint64_t n) { counters_.trap_instructions += n; }

    bool insecure() const { return insecure_; }

    // Registered by the loader so executed instructions can be attributed
    // to trampoline code.
    void add_trampoline_range(Addr base, Addr size);
    bool in_trampoline(Addr pc) const;

    StepOutcome step();
    RunResult run(uint64_t max_steps);

private:
    StepOutcome trap(FaultKind kind, Addr pc, std::string detail);
    StepOutcome execute(const Instruction& in, Addr pc);

    TaggedMemory mem_;
    RegisterFile regs_;
    CostCounters counters_;
    std::vector<std::pair<Addr, Addr>> trampoline_ranges_;
    int compid_ = -1;
    bool insecure_ = false;
};

}  // namespace compartos
