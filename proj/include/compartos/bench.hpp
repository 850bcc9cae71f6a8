#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "compartos/capability.hpp"

namespace compartos {

inline constexpr const char* kBenchReportVersion = "1";

struct BenchRow {
    std::string variant;    // workload / module pair
    std::string operation;  // fncall | switch | ipc
    uint64_t instructions = 0;
    uint64_t trampoline_instructions = 0;
    uint64_t trap_instructions = 0;
};

struct BenchmarkReport {
    std::vector<BenchRow> rows;
    std::string to_table() const;
    std::string to_json() const;
};

// Runs the shipped microbenchmarks against the sender/receiver pair in
// `micro_dir`. `which` is fncall, switch, ipc, or all. Counts are
// deterministic; the repo pins them as golden values.
BenchmarkReport run_benchmarks(const std::filesystem::path& micro_dir,
                               const std::string& which);

}  // namespace compartos
