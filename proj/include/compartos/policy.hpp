#pragma once

#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace compartos {

enum class StrategyKind { ReturnError, CustomHandler, Kill, MicroReboot };

const char* strategy_name(StrategyKind s);

// Symbol every compartment may export to take over its own fault handling.
inline constexpr const char* kFaultHandlerSymbol = "CompartOS_FaultHandler";

struct CompartmentDecl {
    std::string name;
    std::vector<std::string> module_paths;  // comma-grouped: a library shares one captable
    StrategyKind strategy = StrategyKind::ReturnError;
    bool bound_stack = true;
    bool scrub_stack = false;
};

struct AllowRule {
    std::string caller;
    std::string callee;
    std::string symbol;  // exact name or "*"
};

// Boot-time configuration; part of the security policy.
struct SecurityPolicy {
    std::vector<CompartmentDecl> compartments;
    std::vector<AllowRule> rules;
    std::vector<std::string> boot_order;  // defaults to declaration order

    const CompartmentDecl* find(const std::string& name) const;
    bool allows(const std::string& caller, const std::string& callee,
                const std::string& symbol) const;
};

class PolicyError : public std::runtime_error {
public:
    PolicyError(int line, const std::string& message)
        : std::runtime_error("line " + std::to_string(line) + ": " + message),
          line_(line)
    {
    }
    int line() const { return line_; }

private:
    int line_;
};

// Line-oriented UTF-8 text, '#' comments, unknown keys are errors:
//   compartment <name> <path[,path...]> strategy=<...> [bound_stack=<bool>]
//                [scrub_stack=<bool>]
//   allow <caller> -> <callee> : <symbol|*>
//   boot_order <name> ...
SecurityPolicy parse_policy(std::string_view text);

}  // namespace compartos
