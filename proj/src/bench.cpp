#include "compartos/bench.hpp"

#include <iomanip>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "compartos/scenario.hpp"

namespace compartos {

namespace {

// One measurement = one fresh boot, one scheduler run, global counters.
BenchRow measure(const std::filesystem::path& micro_dir,
                 const std::string& operation)
{
    BootedSystem sys = boot_from_policy(micro_dir / "policy.txt", false);
    Scheduler& sched = *sys.scheduler;

    if (operation == "fncall") {
        sched.create_task_entry("caller", "sender", "bench_local");
    } else if (operation == "switch") {
        sched.create_task_entry("caller", "sender", "bench_remote");
    } else if (operation == "ipc") {
        int q = sched.create_queue(4, 1);
        int tx = sched.create_task("tx", "sender");
        int rx = sched.create_task("rx", "receiver");
        sched.push_action(tx, TaskAction::send(q, {0x2a}));
        sched.push_action(rx, TaskAction::receive(q));
    } else {
        throw std::invalid_argument("unknown benchmark '" + operation + "'");
    }

    RunReport report = sched.run(1u << 20);
    if (report.deadlock || report.budget_exhausted)
        throw std::runtime_error("benchmark '" + operation +
                                 "' did not run to completion");
    for (const TaskReport& t : report.tasks)
        if (t.faulted)
            throw std::runtime_error("benchmark '" + operation +
                                     "' faulted in task " + t.name);

    const CostCounters& c = sys.machine->counters();
    return BenchRow{"sender18/receiver41", operation, c.instructions,
                    c.trampoline_instructions, c.trap_instructions};
}

}  // namespace

std::string BenchmarkReport::to_table() const
{
    std::ostringstream os;
    os << "# benchmark report v" << kBenchReportVersion << "\n";
    os << std::left << std::setw(22) << "variant" << std::setw(10)
       << "operation" << std::right << std::setw(14) << "instructions"
       << std::setw(12) << "trampoline" << std::setw(8) << "trap" << "\n";
    for (const BenchRow& r : rows)
        os << std::left << std::setw(22) << r.variant << std::setw(10)
           << r.operation << std::right << std::setw(14) << r.instructions
           << std::setw(12) << r.trampoline_instructions << std::setw(8)
           << r.trap_instructions << "\n";
    return os.str();
}

std::string BenchmarkReport::to_json() const
{
    nlohmann::ordered_json j;
    j["version"] = kBenchReportVersion;
    j["rows"] = nlohmann::ordered_json::array();
    for (const BenchRow& r : rows)
        j["rows"].push_back({{"variant", r.variant},
                             {"operation", r.operation},
                             {"instructions", r.instructions},
                             {"trampoline_instructions",
                              r.trampoline_instructions},
                             {"trap_instructions", r.trap_instructions}});
    return j.dump(2) + "\n";
}

BenchmarkReport run_benchmarks(const std::filesystem::path& micro_dir,
                               const std::string& which)
{
    BenchmarkReport report;
    if (which == "all") {
        for (const char* op : {"fncall", "switch", "ipc"})
            report.rows.push_back(measure(micro_dir, op));
    } else {
        report.rows.push_back(measure(micro_dir, which));
    }
    return report;
}

}  // namespace compartos
