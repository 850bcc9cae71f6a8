#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "compartos/faulthandling.hpp"
#include "compartos/loader.hpp"

namespace compartos {

// Charged on every switch between two different tasks: full register-file
// save/restore including the CGP swap (13 capabilities + 8 words + ids).
inline constexpr uint64_t kContextSwitchCost = 34;
// Per-operation queue bookkeeping (enqueue/dequeue, waiter handling).
inline constexpr uint64_t kQueueOverheadCost = 48;
// Per 8-byte word copied through queue-owned memory (load + store + index).
inline constexpr uint64_t kQueuePerWordCost = 4;

enum class TaskState { Ready, Running, Blocked, Dead };

const char* task_state_name(TaskState s);

struct TaskAction {
    enum class Kind { Call, Send, Receive };
    Kind kind = Kind::Call;
    std::string symbol;            // Call: function in the home compartment
    std::vector<Word> args;        // Call: up to 4, passed in x0..x3
    int queue = -1;                // Send / Receive
    std::vector<uint8_t> payload;  // Send: must equal the queue's item size

    static TaskAction call(std::string symbol, std::vector<Word> args = {})
    {
        TaskAction a;
        a.kind = Kind::Call;
        a.symbol = std::move(symbol);
        a.args = std::move(args);
        return a;
    }
    static TaskAction send(int queue, std::vector<uint8_t> payload)
    {
        TaskAction a;
        a.kind = Kind::Send;
        a.queue = queue;
        a.payload = std::move(payload);
        return a;
    }
    static TaskAction receive(int queue)
    {
        TaskAction a;
        a.kind = Kind::Receive;
        a.queue = queue;
        return a;
    }
};

struct TaskControlBlock {
    int id = 0;
    std::string name;
    int home_comp_id = 0;
    Region stack;
    Region context_stack;  // trusted frame stack, referenced by CTX

    RegisterFile saved_regs;
    int saved_compid = -1;
    TaskState state = TaskState::Ready;
    bool mid_action = false;  // yielded inside a Call; resume, don't restart
    bool faulted = false;

    std::vector<TaskAction> actions;
    size_t next_action = 0;

    CostCounters counters;
    uint64_t activations = 0;
    uint64_t max_activation_instructions = 0;
    std::vector<Word> call_results;             // x0 of each completed Call
    std::vector<std::vector<uint8_t>> received; // payloads from Receive
};

struct MessageQueue {
    int id = 0;
    Addr capacity = 0;
    Addr item_size = 0;
    Region buffer;
    Addr head = 0;
    Addr count = 0;
    std::vector<int> send_waiters;
    std::vector<int> recv_waiters;
};

struct TaskReport {
    std::string name;
    TaskState state = TaskState::Dead;
    bool faulted = false;
    uint64_t activations = 0;
    CostCounters counters;
    uint64_t max_activation_instructions = 0;
    std::vector<Word> call_results;
};

struct RunReport {
    bool deadlock = false;
    bool budget_exhausted = false;
    uint64_t total_instructions = 0;
    std::vector<TaskReport> tasks;
};

// Round-robin cooperative scheduler over one machine. Tasks interleave at
// Yield, Halt (action completion), blocking queue operations, and faults.
class Scheduler {
public:
    explicit Scheduler(LinkedSystem& sys);

    int create_task(const std::string& name, const std::string& home_compartment,
                    Addr stack_size = 1024);
    // convenience matching the one-entry task shape
    int create_task_entry(const std::string& name,
                          const std::string& home_compartment,
                          const std::string& entry_symbol,
                          std::vector<Word> args = {}, Addr stack_size = 1024);
    void push_action(int task_id, TaskAction action);

    int create_queue(Addr capacity, Addr item_size);

    RunReport run(uint64_t max_total_instructions);

    FaultLog& fault_log() { return log_; }
    const FaultLog& fault_log() const { return log_; }
    TaskControlBlock& task(int id) { return tasks_[size_t(id)]; }
    const TaskControlBlock& task(int id) const { return tasks_[size_t(id)]; }
    size_t task_count() const { return tasks_.size(); }

private:
    enum class ActivationEnd { Yielded, Done, Blocked, Budget };

    void switch_to(TaskControlBlock& tcb);
    void save_current(TaskControlBlock& tcb);
    void start_call(TaskControlBlock& tcb, const TaskAction& action);
    bool do_send(TaskControlBlock& tcb, const TaskAction& action);
    bool do_receive(TaskControlBlock& tcb, const TaskAction& action);
    ActivationEnd run_activation(TaskControlBlock& tcb, uint64_t budget);

    LinkedSystem* sys_;
    FaultLog log_;
    std::vector<TaskControlBlock> tasks_;
    std::vector<MessageQueue> queues_;
    int last_run_ = -1;
};

}  // namespace compartos
