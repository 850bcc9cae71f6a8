#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <string>

#include "compartos/assembler.hpp"
#include "compartos/loader.hpp"
#include "compartos/policy.hpp"

namespace testutil {

struct TestSys {
    std::unique_ptr<compartos::Machine> machine;
    std::unique_ptr<compartos::LinkedSystem> sys;
    compartos::SecurityPolicy policy;
};

// Boot a system from in-memory assembly sources keyed by module path.
inline TestSys boot_sources(const std::string& policy_text,
                            std::map<std::string, std::string> sources,
                            bool insecure = false,
                            compartos::Addr mem_size = 1u << 20)
{
    TestSys t;
    t.policy = compartos::parse_policy(policy_text);
    t.machine = std::make_unique<compartos::Machine>(mem_size, insecure);
    t.sys = compartos::boot(
        *t.machine, t.policy, [&](const compartos::CompartmentDecl& decl) {
            std::vector<compartos::ModuleImage> images;
            for (const std::string& p : decl.module_paths)
                images.push_back(compartos::assemble(
                    sources.at(p),
                    std::filesystem::path(p).stem().string()));
            return images;
        });
    return t;
}

}  // namespace testutil
