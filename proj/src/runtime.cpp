#include "compartos/runtime.hpp"

#include <algorithm>
#include <cassert>

namespace compartos {

namespace {

constexpr Addr kContextStackSize = 256;  // 16 nested entries

}  // namespace

const char* task_state_name(TaskState s)
{
    switch (s) {
    case TaskState::Ready:
        return "ready";
    case TaskState::Running:
        return "running";
    case TaskState::Blocked:
        return "blocked";
    case TaskState::Dead:
        return "dead";
    }
    return "?";
}

Scheduler::Scheduler(LinkedSystem& sys) : sys_(&sys) {}

int Scheduler::create_task(const std::string& name,
                           const std::string& home_compartment, Addr stack_size)
{
    Compartment* home = sys_->find_compartment(home_compartment);
    if (!home)
        throw LoaderError(LoaderErrorKind::UnknownSymbol,
                          "create_task: unknown compartment '" +
                              home_compartment + "'");
    TaskControlBlock tcb;
    tcb.id = int(tasks_.size());
    tcb.name = name;
    tcb.home_comp_id = home->id;

    Region stack = sys_->allocate(stack_size, ".stack." + name);
    CapResult p = derive_and_perms(
        stack.cap, PERM_LOAD | PERM_STORE | PERM_LOAD_CAP | PERM_STORE_CAP);
    assert(p.ok());
    stack.cap = with_cursor(p.cap, stack.base + stack.size);
    tcb.stack = stack;

    Region ctx = sys_->allocate(kContextStackSize, ".ctx." + name);
    CapResult cp = derive_and_perms(ctx.cap, PERM_LOAD_CAP | PERM_STORE_CAP);
    assert(cp.ok());
    ctx.cap = cp.cap;  // cursor at base: depth 0
    tcb.context_stack = ctx;

    tcb.saved_compid = home->id;
    tasks_.push_back(std::move(tcb));
    return tasks_.back().id;
}

int Scheduler::create_task_entry(const std::string& name,
                                 const std::string& home_compartment,
                                 const std::string& entry_symbol,
                                 std::vector<Word> args, Addr stack_size)
{
    int id = create_task(name, home_compartment, stack_size);
    Compartment* home = sys_->find_compartment(home_compartment);
    if (!home->find_symbol(entry_symbol))
        throw LoaderError(LoaderErrorKind::UnknownSymbol,
                          "create_task: '" + entry_symbol +
                              "' not defined in compartment '" +
                              home_compartment + "'");
    push_action(id, TaskAction::call(entry_symbol, std::move(args)));
    return id;
}

void Scheduler::push_action(int task_id, TaskAction action)
{
    tasks_.at(size_t(task_id)).actions.push_back(std::move(action));
}

int Scheduler::create_queue(Addr capacity, Addr item_size)
{
    MessageQueue q;
    q.id = int(queues_.size());
    q.capacity = capacity;
    q.item_size = item_size;
    q.buffer = sys_->allocate(capacity * item_size, ".queue." +
                                                        std::to_string(q.id));
    queues_.push_back(std::move(q));
    return queues_.back().id;
}

void Scheduler::switch_to(TaskControlBlock& tcb)
{
    Machine& m = sys_->machine();
    m.regs() = tcb.saved_regs;
    m.set_compartment_id(tcb.saved_compid);
    tcb.state = TaskState::Running;
}

void Scheduler::save_current(TaskControlBlock& tcb)
{
    Machine& m = sys_->machine();
    tcb.saved_regs = m.regs();
    tcb.saved_compid = m.compartment_id();
}

void Scheduler::start_call(TaskControlBlock& tcb, const TaskAction& action)
{
    Compartment* home = sys_->find_compartment(tcb.home_comp_id);
    Capability entry = sys_->function_capability(*home, action.symbol);

    Machine& m = sys_->machine();
    RegisterFile& regs = m.regs();
    regs = RegisterFile{};
    regs.pcc = entry;
    regs.cgp = sys_->captable_capability(*home);
    regs.csp = tcb.stack.cap;  // cursor back at the top for each call
    regs.cra = sys_->exit_sentry();
    regs.ctx = tcb.context_stack.cap;
    for (size_t i = 0; i < action.args.size() && i < 4; ++i)
        regs.x[i] = action.args[i];
    m.set_compartment_id(tcb.home_comp_id);
}

bool Scheduler::do_send(TaskControlBlock& tcb, const TaskAction& action)
{
    MessageQueue& q = queues_.at(size_t(action.queue));
    assert(action.payload.size() == q.item_size && "payload size mismatch");
    if (q.count == q.capacity) {
        q.send_waiters.push_back(tcb.id);
        return false;
    }
    Addr slot = (q.head + q.count) % q.capacity;
    sys_->machine().memory().write_bytes(q.buffer.base + slot * q.item_size,
                                         action.payload);
    ++q.count;
    uint64_t words = (q.item_size + 7) / 8;
    sys_->machine().counters().instructions +=
        kQueueOverheadCost + kQueuePerWordCost * words;
    for (int w : q.recv_waiters)
        if (tasks_[size_t(w)].state == TaskState::Blocked)
            tasks_[size_t(w)].state = TaskState::Ready;
    q.recv_waiters.clear();
    return true;
}

bool Scheduler::do_receive(TaskControlBlock& tcb, const TaskAction& action)
{
    MessageQueue& q = queues_.at(size_t(action.queue));
    if (q.count == 0) {
        q.recv_waiters.push_back(tcb.id);
        return false;
    }
    std::vector<uint8_t> item(q.item_size);
    sys_->machine().memory().read_bytes(q.buffer.base + q.head * q.item_size,
                                        item);
    q.head = (q.head + 1) % q.capacity;
    --q.count;
    uint64_t words = (q.item_size + 7) / 8;
    sys_->machine().counters().instructions +=
        kQueueOverheadCost + kQueuePerWordCost * words;
    tcb.received.push_back(std::move(item));
    for (int w : q.send_waiters)
        if (tasks_[size_t(w)].state == TaskState::Blocked)
            tasks_[size_t(w)].state = TaskState::Ready;
    q.send_waiters.clear();
    return true;
}

// Run one activation: resume (or start) work and go until the task
// yields, blocks, finishes all actions, dies, or the budget runs out.
Scheduler::ActivationEnd Scheduler::run_activation(TaskControlBlock& tcb,
                                                   uint64_t budget)
{
    Machine& m = sys_->machine();
    while (true) {
        if (!tcb.mid_action) {
            if (tcb.next_action >= tcb.actions.size()) {
                tcb.state = TaskState::Dead;  // workload complete
                return ActivationEnd::Done;
            }
            const TaskAction& action = tcb.actions[tcb.next_action];
            switch (action.kind) {
            case TaskAction::Kind::Send:
                if (!do_send(tcb, action)) {
                    tcb.state = TaskState::Blocked;
                    return ActivationEnd::Blocked;
                }
                ++tcb.next_action;
                continue;
            case TaskAction::Kind::Receive:
                if (!do_receive(tcb, action)) {
                    tcb.state = TaskState::Blocked;
                    return ActivationEnd::Blocked;
                }
                ++tcb.next_action;
                continue;
            case TaskAction::Kind::Call:
                start_call(tcb, action);
                tcb.mid_action = true;
                break;
            }
        }

        // mid-Call: execute machine code
        uint64_t used = m.counters().instructions;
        if (used >= budget)
            return ActivationEnd::Budget;
        RunResult res = m.run(budget - used);
        switch (res.status) {
        case RunStatus::Halted:
            tcb.call_results.push_back(m.regs().x[0]);
            tcb.mid_action = false;
            ++tcb.next_action;
            // one Call per activation: repeated calls interleave fairly
            // and per-activation accounting means per-call accounting
            if (tcb.next_action >= tcb.actions.size()) {
                tcb.state = TaskState::Dead;
                return ActivationEnd::Done;
            }
            return ActivationEnd::Yielded;
        case RunStatus::Yielded:
            return ActivationEnd::Yielded;
        case RunStatus::BudgetExhausted:
            return ActivationEnd::Budget;
        case RunStatus::Trapped: {
            Continuation c = dispatch_fault(*sys_, *res.fault, log_);
            if (c.resumed)
                continue;  // caller state restored; keep running
            tcb.faulted = true;
            tcb.state = TaskState::Dead;
            return ActivationEnd::Done;
        }
        }
    }
}

RunReport Scheduler::run(uint64_t max_total_instructions)
{
    Machine& m = sys_->machine();
    RunReport report;

    while (m.counters().instructions < max_total_instructions) {
        // round-robin: next Ready task after the last one that ran
        int chosen = -1;
        for (size_t k = 1; k <= tasks_.size(); ++k) {
            size_t i = size_t(last_run_ + int(k)) % tasks_.size();
            if (tasks_[i].state == TaskState::Ready) {
                chosen = int(i);
                break;
            }
        }
        if (chosen < 0) {
            bool any_blocked = std::any_of(
                tasks_.begin(), tasks_.end(), [](const TaskControlBlock& t) {
                    return t.state == TaskState::Blocked;
                });
            report.deadlock = any_blocked;
            break;
        }

        TaskControlBlock& tcb = tasks_[size_t(chosen)];
        if (last_run_ >= 0 && last_run_ != chosen)
            m.counters().instructions += kContextSwitchCost;
        last_run_ = chosen;

        CostCounters before = m.counters();
        switch_to(tcb);
        ActivationEnd end = run_activation(tcb, max_total_instructions);
        CostCounters after = m.counters();

        uint64_t di = after.instructions - before.instructions;
        tcb.counters.instructions += di;
        tcb.counters.trampoline_instructions +=
            after.trampoline_instructions - before.trampoline_instructions;
        tcb.counters.trap_instructions +=
            after.trap_instructions - before.trap_instructions;
        ++tcb.activations;
        tcb.max_activation_instructions =
            std::max(tcb.max_activation_instructions, di);

        switch (end) {
        case ActivationEnd::Yielded:
            save_current(tcb);
            tcb.state = TaskState::Ready;
            break;
        case ActivationEnd::Blocked:
            save_current(tcb);
            break;  // state set in do_send/do_receive path
        case ActivationEnd::Done:
            break;  // state already Dead
        case ActivationEnd::Budget:
            save_current(tcb);
            tcb.state = TaskState::Ready;
            report.budget_exhausted = true;
            break;
        }
        if (report.budget_exhausted)
            break;
    }

    report.total_instructions = m.counters().instructions;
    for (const TaskControlBlock& t : tasks_) {
        TaskReport tr;
        tr.name = t.name;
        tr.state = t.state;
        tr.faulted = t.faulted;
        tr.activations = t.activations;
        tr.counters = t.counters;
        tr.max_activation_instructions = t.max_activation_instructions;
        tr.call_results = t.call_results;
        report.tasks.push_back(std::move(tr));
    }
    return report;
}

}  // namespace compartos
