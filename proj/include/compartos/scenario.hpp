#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "compartos/runtime.hpp"

namespace compartos {

// A booted system plus its scheduler, owned together so harness callers
// get one handle. Built from a policy whose module paths are .s sources
// (assembled on the fly) or .cpo images, relative to `dir`.
struct BootedSystem {
    std::unique_ptr<Machine> machine;
    std::unique_ptr<LinkedSystem> system;
    std::unique_ptr<Scheduler> scheduler;
    SecurityPolicy policy;
};

BootedSystem boot_from_policy(const std::filesystem::path& policy_file,
                              bool insecure, Addr memory_size = 1u << 20);

struct ScenarioResult {
    std::string name;
    bool pass = true;
    std::vector<std::string> failures;
    std::string fault_log_text;
    std::string detail_text;  // task table + digests, deterministic
    RunReport report;
};

std::string format_scenario_result(const ScenarioResult& r);

// Runs `scenario.txt` in `dir`. Line-oriented:
//   name <id>
//   policy <file>
//   queue <capacity> <item_size>
//   task <name> <compartment> <symbol> [repeat=N] [stack=BYTES] [arg...]
//   action <task> call <symbol> [arg...]
//   action <task> send <queue-index> <byte...>
//   action <task> recv <queue-index>
//   run <max_instructions>
//   [secure] / [insecure] / [all]      (mode-conditional sections)
//   expect_fault <kind|*> <compartment> <strategy>
//   expect_fault_count <n>
//   expect_no_fault
//   expect_result <task> <index> <value>
//   expect_intact <compartment> <symbol>
//   expect_corrupted <compartment> <symbol>
//   expect_word <compartment> <symbol> <offset> <value>
//   expect_task <task> <dead|ready|blocked> <faulted|clean>
//   budget <task> <max instructions per activation>
ScenarioResult run_scenario(const std::filesystem::path& dir, bool insecure);

}  // namespace compartos
