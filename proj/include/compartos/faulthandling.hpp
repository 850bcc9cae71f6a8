#pragma once

#include <string>
#include <vector>

#include "compartos/loader.hpp"

namespace compartos {

struct FaultEvent {
    FaultRecord record;
    std::string compartment;  // name, or "-" when no compartment is current
    StrategyKind strategy = StrategyKind::ReturnError;
    std::string action;  // what was actually done, incl. escalations
    uint64_t recovery_cost = 0;  // instructions charged to recovery
    bool task_dead = false;
};

// Append-only per run; one line per event for the CLI.
class FaultLog {
public:
    void append(FaultEvent ev) { events_.push_back(std::move(ev)); }
    const std::vector<FaultEvent>& events() const { return events_; }
    std::string to_text() const;

private:
    std::vector<FaultEvent> events_;
};

std::string format_fault_event(const FaultEvent& ev);

struct Continuation {
    bool resumed = false;    // machine registers set up to continue
    bool task_dead = false;  // fault at depth 0: the task's home faulted
    uint64_t recovery_cost = 0;
};

// Entry nesting depth of the current task, derived from the trusted
// context stack register.
uint64_t entry_depth(const Machine& machine);

// Invalidate the compartment's captable and the metadata of every
// trampoline that targets it. Returns the instructions charged.
uint64_t kill_compartment(LinkedSystem& sys, Compartment& comp);

// Restore .data/.bss to the post-load snapshot and re-derive the
// compartment's captable slots. Returns the instructions charged.
uint64_t micro_reboot(LinkedSystem& sys, Compartment& comp);

// Unwind exactly one trampoline frame, restoring the caller and setting
// the error return value. Escalates to Kill on a corrupted save area.
Continuation apply_return_error(LinkedSystem& sys, FaultLog& log,
                                const FaultRecord& fault);

// Apply the faulting compartment's strategy. Runs synchronously between
// machine steps.
Continuation dispatch_fault(LinkedSystem& sys, const FaultRecord& fault,
                            FaultLog& log);

}  // namespace compartos
