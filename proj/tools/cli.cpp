// compartos: assemble modules, link compartments per policy, run, benchmark,
// inject faults, and emit compartment graphs.
//
// Exit codes: 0 success, 1 usage error, 2 validation/domain error,
// 3 unhandled runtime fault (a scenario or run that ended in failure).

#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "compartos/assembler.hpp"
#include "compartos/bench.hpp"
#include "compartos/modfile.hpp"
#include "compartos/reachability.hpp"
#include "compartos/scenario.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitValidation = 2;
constexpr int kExitRuntimeFault = 3;

std::string read_file(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw std::runtime_error("cannot read " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

int cmd_asm(const std::string& src, const std::string& out)
{
    compartos::ModuleImage image = compartos::assemble(
        read_file(src), std::filesystem::path(src).stem().string());
    auto diags = compartos::validate(image);
    if (!diags.empty()) {
        for (auto& d : diags)
            std::cerr << "error: " << d.message << " (" << d.context << ")\n";
        return kExitValidation;
    }
    std::vector<uint8_t> bytes = compartos::encode(image);
    std::ofstream os(out, std::ios::binary);
    if (!os)
        throw std::runtime_error("cannot write " + out);
    os.write(reinterpret_cast<const char*>(bytes.data()),
             std::streamsize(bytes.size()));
    std::cout << "wrote " << out << ": " << image.symbols.size()
              << " symbols, " << image.relocations.size() << " relocations\n";
    return kExitOk;
}

int cmd_link(const std::string& policy_file)
{
    compartos::BootedSystem sys =
        compartos::boot_from_policy(policy_file, false);
    for (const auto& comp : sys.system->compartments()) {
        std::cout << "compartment " << comp->name << " id=" << comp->id
                  << " strategy=" << strategy_name(comp->strategy)
                  << " slots=" << comp->slots.size() << "\n";
        for (const compartos::Region& r : comp->regions)
            std::cout << "  " << r.name << " base=" << r.base
                      << " size=" << r.size << " perms="
                      << compartos::perms_to_string(r.cap.perms) << "\n";
    }
    for (const compartos::LinkEdge& e : sys.system->edges())
        std::cout << "edge " << e.caller << " -> " << e.callee << " : "
                  << e.symbol << "\n";
    for (const std::string& d : sys.system->diagnostics())
        std::cout << "diagnostic: " << d << "\n";
    return kExitOk;
}

int cmd_run(const std::string& policy_file, uint64_t max_steps, bool insecure,
            const std::vector<std::string>& task_specs)
{
    compartos::BootedSystem sys =
        compartos::boot_from_policy(policy_file, insecure);
    // task spec: name:compartment:symbol
    for (const std::string& spec : task_specs) {
        auto p1 = spec.find(':');
        auto p2 = spec.find(':', p1 + 1);
        if (p1 == std::string::npos || p2 == std::string::npos)
            throw CLI::ValidationError("--task expects name:compartment:symbol");
        sys.scheduler->create_task_entry(spec.substr(0, p1),
                                         spec.substr(p1 + 1, p2 - p1 - 1),
                                         spec.substr(p2 + 1));
    }
    compartos::RunReport report = sys.scheduler->run(max_steps);
    for (const compartos::TaskReport& t : report.tasks)
        std::cout << "task " << t.name
                  << " state=" << compartos::task_state_name(t.state)
                  << " faulted=" << (t.faulted ? 1 : 0)
                  << " instructions=" << t.counters.instructions << "\n";
    std::cout << sys.scheduler->fault_log().to_text();
    if (report.deadlock) {
        std::cout << "deadlock\n";
        return kExitRuntimeFault;
    }
    for (const compartos::TaskReport& t : report.tasks)
        if (t.faulted)
            return kExitRuntimeFault;
    return kExitOk;
}

int cmd_bench(const std::string& which, const std::string& micro_dir,
              bool json)
{
    compartos::BenchmarkReport report =
        compartos::run_benchmarks(micro_dir, which);
    std::cout << (json ? report.to_json() : report.to_table());
    return kExitOk;
}

int cmd_inject(const std::string& scenario_dir, bool insecure)
{
    compartos::ScenarioResult result =
        compartos::run_scenario(scenario_dir, insecure);
    std::cout << compartos::format_scenario_result(result);
    return result.pass ? kExitOk : kExitRuntimeFault;
}

int cmd_graph(const std::string& policy_file, const std::string& out)
{
    compartos::BootedSystem sys =
        compartos::boot_from_policy(policy_file, false);
    std::string dot = compartos::to_dot(*sys.system);
    if (out.empty() || out == "-") {
        std::cout << dot;
    } else {
        std::ofstream os(out);
        if (!os)
            throw std::runtime_error("cannot write " + out);
        os << dot;
    }
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"linkage-based compartmentalization toolchain"};
    app.require_subcommand(1);

    std::string src, out, policy_file, which = "all", scenario_dir;
    std::string micro_dir = "scenarios/micro";
    uint64_t max_steps = 1u << 20;
    bool insecure = false, json = false;
    std::vector<std::string> task_specs;

    auto* a = app.add_subcommand("asm", "assemble a module source to .cpo");
    a->add_option("src", src)->required();
    a->add_option("-o,--output", out)->required();

    auto* l = app.add_subcommand("link", "load and link, print the result");
    l->add_option("policy", policy_file)->required();

    auto* r = app.add_subcommand("run", "boot a policy and schedule tasks");
    r->add_option("policy", policy_file)->required();
    r->add_option("--max-steps", max_steps);
    r->add_flag("--insecure", insecure, "disable capability enforcement");
    r->add_option("--task", task_specs, "name:compartment:symbol");

    auto* b = app.add_subcommand("bench", "run microbenchmarks");
    b->add_option("which", which)->check(
        CLI::IsMember({"fncall", "switch", "ipc", "all"}));
    b->add_option("--micro-dir", micro_dir, "sender/receiver scenario dir");
    b->add_flag("--json", json);

    auto* i = app.add_subcommand("inject", "run a fault scenario directory");
    i->add_option("scenario", scenario_dir)->required();
    i->add_flag("--insecure", insecure);

    auto* g = app.add_subcommand("graph", "emit the compartment graph (DOT)");
    g->add_option("policy", policy_file)->required();
    g->add_option("-o,--output", out, "output file, - for stdout");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (a->parsed())
            return cmd_asm(src, out);
        if (l->parsed())
            return cmd_link(policy_file);
        if (r->parsed())
            return cmd_run(policy_file, max_steps, insecure, task_specs);
        if (b->parsed())
            return cmd_bench(which, micro_dir, json);
        if (i->parsed())
            return cmd_inject(scenario_dir, insecure);
        if (g->parsed())
            return cmd_graph(policy_file, out);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitValidation;
    }
    return kExitUsage;
}
