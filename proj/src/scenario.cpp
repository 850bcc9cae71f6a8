#include "compartos/scenario.hpp"

#include <fstream>
#include <map>
#include <sstream>

#include "compartos/assembler.hpp"
#include "compartos/digest.hpp"
#include "compartos/modfile.hpp"

namespace compartos {

namespace {

std::string read_file(const std::filesystem::path& p)
{
    std::ifstream in(p, std::ios::binary);
    if (!in)
        throw std::runtime_error("cannot read " + p.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::vector<std::string> tokenize(const std::string& line)
{
    std::istringstream ss(line);
    std::vector<std::string> toks;
    std::string t;
    while (ss >> t) {
        if (t[0] == '#')
            break;
        toks.push_back(t);
    }
    return toks;
}

ModuleImage load_module(const std::filesystem::path& path)
{
    std::string text = read_file(path);
    if (path.extension() == ".s")
        return assemble(text, path.stem().string());
    std::vector<uint8_t> bytes(text.begin(), text.end());
    return decode(bytes);
}

struct SymbolRef {
    std::string comp;
    std::string symbol;
};

// [addr, size) of a data symbol, for digest assertions
std::pair<Addr, Addr> symbol_range(LinkedSystem& sys, const SymbolRef& ref)
{
    Compartment* comp = sys.find_compartment(ref.comp);
    if (!comp)
        throw std::runtime_error("unknown compartment '" + ref.comp + "'");
    const Symbol* sym = comp->find_symbol(ref.symbol);
    if (!sym)
        throw std::runtime_error("unknown symbol '" + ref.symbol + "' in '" +
                                 ref.comp + "'");
    const Region* reg = comp->region(section_name(sym->section));
    return {reg->base + Addr(sym->offset), Addr(sym->size)};
}

uint64_t symbol_digest(LinkedSystem& sys, const SymbolRef& ref)
{
    auto [base, size] = symbol_range(sys, ref);
    std::vector<uint8_t> bytes(size);
    sys.machine().memory().read_bytes(base, bytes);
    return fnv1a64(bytes);
}

struct FaultExpect {
    std::string kind;  // or "*"
    std::string comp;
    std::string strategy;
};

}  // namespace

BootedSystem boot_from_policy(const std::filesystem::path& policy_file,
                              bool insecure, Addr memory_size)
{
    BootedSystem b;
    b.policy = parse_policy(read_file(policy_file));
    b.machine = std::make_unique<Machine>(memory_size, insecure);
    std::filesystem::path dir = policy_file.parent_path();
    b.system = boot(*b.machine, b.policy, [&](const CompartmentDecl& decl) {
        std::vector<ModuleImage> images;
        for (const std::string& p : decl.module_paths)
            images.push_back(load_module(dir / p));
        return images;
    });
    b.scheduler = std::make_unique<Scheduler>(*b.system);
    return b;
}

std::string format_scenario_result(const ScenarioResult& r)
{
    std::ostringstream os;
    os << "scenario " << r.name << ": " << (r.pass ? "PASS" : "FAIL") << "\n";
    os << r.detail_text;
    if (!r.fault_log_text.empty())
        os << r.fault_log_text;
    for (const std::string& f : r.failures)
        os << "  FAIL: " << f << "\n";
    return os.str();
}

ScenarioResult run_scenario(const std::filesystem::path& dir, bool insecure)
{
    ScenarioResult result;
    std::string text = read_file(dir / "scenario.txt");

    BootedSystem sys;
    std::map<std::string, int> task_ids;
    std::vector<FaultExpect> fault_expects;
    std::optional<size_t> fault_count_expect;
    bool expect_no_fault = false;
    std::vector<std::pair<SymbolRef, bool>> digest_expects;  // true = intact
    std::vector<std::tuple<std::string, size_t, Word>> result_expects;
    std::vector<std::tuple<SymbolRef, Addr, Word>> word_expects;
    std::vector<std::tuple<std::string, std::string, bool>> task_expects;
    std::vector<std::pair<std::string, uint64_t>> budgets;
    std::map<std::string, uint64_t> pre_digests;
    uint64_t max_instructions = 1u << 20;
    bool ran = false;

    enum class Mode { All, Secure, Insecure } mode = Mode::All;
    auto active = [&] {
        return mode == Mode::All || (mode == Mode::Secure) == !insecure;
    };
    auto need_task = [&](const std::string& name) {
        auto it = task_ids.find(name);
        if (it == task_ids.end())
            throw std::runtime_error("unknown task '" + name + "'");
        return it->second;
    };

    auto capture_digest = [&](const SymbolRef& ref) {
        std::string key = ref.comp + ":" + ref.symbol;
        if (!pre_digests.count(key))
            pre_digests[key] = symbol_digest(*sys.system, ref);
    };

    auto do_run = [&] {
        if (ran)
            throw std::runtime_error("scenario has more than one run line");
        // capture pre-run digests for all intact/corrupted expectations
        for (auto& [ref, intact] : digest_expects)
            capture_digest(ref);
        result.report = sys.scheduler->run(max_instructions);
        ran = true;
    };

    std::istringstream lines(text);
    std::string line;
    int lineno = 0;
    while (std::getline(lines, line)) {
        ++lineno;
        auto toks = tokenize(line);
        if (toks.empty())
            continue;
        const std::string& k = toks[0];
        try {
            if (k == "[secure]") {
                mode = Mode::Secure;
            } else if (k == "[insecure]") {
                mode = Mode::Insecure;
            } else if (k == "[all]") {
                mode = Mode::All;
            } else if (!active()) {
                continue;
            } else if (k == "name") {
                result.name = toks.at(1);
            } else if (k == "policy") {
                sys = boot_from_policy(dir / toks.at(1), insecure);
            } else if (k == "queue") {
                sys.scheduler->create_queue(Addr(std::stoul(toks.at(1))),
                                            Addr(std::stoul(toks.at(2))));
            } else if (k == "task") {
                int repeat = 1;
                Addr stack = 1024;
                std::vector<Word> args;
                for (size_t i = 4; i < toks.size(); ++i) {
                    if (toks[i].rfind("repeat=", 0) == 0)
                        repeat = std::stoi(toks[i].substr(7));
                    else if (toks[i].rfind("stack=", 0) == 0)
                        stack = Addr(std::stoul(toks[i].substr(6)));
                    else
                        args.push_back(Word(std::stoll(toks[i], nullptr, 0)));
                }
                int id = sys.scheduler->create_task(toks.at(1), toks.at(2),
                                                    stack);
                for (int r = 0; r < repeat; ++r)
                    sys.scheduler->push_action(
                        id, TaskAction::call(toks.at(3), args));
                task_ids[toks.at(1)] = id;
            } else if (k == "action") {
                int id = need_task(toks.at(1));
                const std::string& what = toks.at(2);
                if (what == "call") {
                    std::vector<Word> args;
                    for (size_t i = 4; i < toks.size(); ++i)
                        args.push_back(Word(std::stoll(toks[i], nullptr, 0)));
                    sys.scheduler->push_action(
                        id, TaskAction::call(toks.at(3), args));
                } else if (what == "send") {
                    std::vector<uint8_t> payload;
                    for (size_t i = 4; i < toks.size(); ++i)
                        payload.push_back(
                            uint8_t(std::stoul(toks[i], nullptr, 0)));
                    sys.scheduler->push_action(
                        id, TaskAction::send(std::stoi(toks.at(3)), payload));
                } else if (what == "recv") {
                    sys.scheduler->push_action(
                        id, TaskAction::receive(std::stoi(toks.at(3))));
                } else {
                    throw std::runtime_error("unknown action '" + what + "'");
                }
            } else if (k == "run") {
                max_instructions = std::stoull(toks.at(1));
                do_run();
            } else if (k == "expect_fault") {
                fault_expects.push_back({toks.at(1), toks.at(2), toks.at(3)});
            } else if (k == "expect_fault_count") {
                fault_count_expect = std::stoul(toks.at(1));
            } else if (k == "expect_no_fault") {
                expect_no_fault = true;
            } else if (k == "expect_result") {
                result_expects.emplace_back(
                    toks.at(1), std::stoul(toks.at(2)),
                    Word(std::stoll(toks.at(3), nullptr, 0)));
            } else if (k == "expect_intact" || k == "expect_corrupted") {
                SymbolRef ref{toks.at(1), toks.at(2)};
                if (!ran)
                    capture_digest(ref);
                digest_expects.emplace_back(ref, k == "expect_intact");
            } else if (k == "expect_word") {
                word_expects.emplace_back(
                    SymbolRef{toks.at(1), toks.at(2)},
                    Addr(std::stoul(toks.at(3), nullptr, 0)),
                    Word(std::stoll(toks.at(4), nullptr, 0)));
            } else if (k == "expect_task") {
                task_expects.emplace_back(toks.at(1), toks.at(2),
                                          toks.at(3) == "faulted");
            } else if (k == "budget") {
                budgets.emplace_back(toks.at(1), std::stoull(toks.at(2)));
            } else {
                throw std::runtime_error("unknown scenario key '" + k + "'");
            }
        } catch (const std::exception& e) {
            throw std::runtime_error(dir.string() + "/scenario.txt:" +
                                     std::to_string(lineno) + ": " + e.what());
        }
    }
    if (!ran)
        throw std::runtime_error("scenario '" + result.name + "' never ran");

    auto fail = [&](const std::string& msg) {
        result.pass = false;
        result.failures.push_back(msg);
    };

    const auto& events = sys.scheduler->fault_log().events();
    if (expect_no_fault && !events.empty())
        fail("expected no faults, got " + std::to_string(events.size()));
    if (fault_count_expect && events.size() != *fault_count_expect)
        fail("expected " + std::to_string(*fault_count_expect) +
             " faults, got " + std::to_string(events.size()));
    for (size_t i = 0; i < fault_expects.size(); ++i) {
        const FaultExpect& fe = fault_expects[i];
        if (i >= events.size()) {
            fail("expected fault #" + std::to_string(i) + " (" + fe.kind +
                 " in " + fe.comp + "), but only " +
                 std::to_string(events.size()) + " faults occurred");
            continue;
        }
        const FaultEvent& ev = events[i];
        if (fe.kind != "*" && fe.kind != fault_kind_name(ev.record.kind))
            fail("fault #" + std::to_string(i) + " kind: expected " + fe.kind +
                 ", got " + fault_kind_name(ev.record.kind));
        if (ev.compartment != fe.comp)
            fail("fault #" + std::to_string(i) + " comp: expected " + fe.comp +
                 ", got " + ev.compartment);
        if (fe.strategy != strategy_name(ev.strategy))
            fail("fault #" + std::to_string(i) + " strategy: expected " +
                 fe.strategy + ", got " + strategy_name(ev.strategy));
    }

    for (auto& [task, idx, value] : result_expects) {
        const auto& results =
            sys.scheduler->task(need_task(task)).call_results;
        if (idx >= results.size())
            fail("task " + task + " has no result #" + std::to_string(idx));
        else if (results[idx] != value)
            fail("task " + task + " result #" + std::to_string(idx) +
                 ": expected " + std::to_string(value) + ", got " +
                 std::to_string(results[idx]));
    }

    std::ostringstream detail;
    for (auto& [ref, intact] : digest_expects) {
        std::string key = ref.comp + ":" + ref.symbol;
        uint64_t now = symbol_digest(*sys.system, ref);
        bool same = now == pre_digests.at(key);
        detail << "digest " << key << " pre=" << digest_hex(pre_digests.at(key))
               << " post=" << digest_hex(now)
               << (same ? " (intact)" : " (changed)") << "\n";
        if (intact != same)
            fail(key + (intact ? " expected intact but changed"
                               : " expected corrupted but intact"));
    }
    for (auto& [ref, off, value] : word_expects) {
        auto [base, size] = symbol_range(*sys.system, ref);
        (void)size;
        Word got = sys.machine->memory().read_word(base + off);
        if (got != value)
            fail(ref.comp + ":" + ref.symbol + "+" + std::to_string(off) +
                 ": expected " + std::to_string(value) + ", got " +
                 std::to_string(got));
    }
    for (auto& [task, state, faulted] : task_expects) {
        const TaskControlBlock& tcb = sys.scheduler->task(need_task(task));
        if (task_state_name(tcb.state) != state)
            fail("task " + task + " state: expected " + state + ", got " +
                 task_state_name(tcb.state));
        if (tcb.faulted != faulted)
            fail("task " + task + (faulted ? " expected faulted" : " expected clean"));
    }
    for (auto& [task, budget] : budgets) {
        const TaskControlBlock& tcb = sys.scheduler->task(need_task(task));
        detail << "budget " << task << " max_activation="
               << tcb.max_activation_instructions << " limit=" << budget
               << "\n";
        if (tcb.max_activation_instructions > budget)
            fail("task " + task + " exceeded per-activation budget: " +
                 std::to_string(tcb.max_activation_instructions) + " > " +
                 std::to_string(budget));
    }

    for (const TaskReport& t : result.report.tasks)
        detail << "task " << t.name << " state=" << task_state_name(t.state)
               << " faulted=" << (t.faulted ? 1 : 0)
               << " activations=" << t.activations
               << " instructions=" << t.counters.instructions
               << " trap=" << t.counters.trap_instructions << "\n";
    if (result.report.deadlock)
        fail("deadlock: all live tasks blocked");
    if (result.report.budget_exhausted)
        fail("instruction budget exhausted before completion");

    result.fault_log_text = sys.scheduler->fault_log().to_text();
    result.detail_text = detail.str();
    return result;
}

}  // namespace compartos
