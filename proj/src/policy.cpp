#include "compartos/policy.hpp"

#include <cctype>
#include <sstream>
#include <vector>

namespace compartos {

const char* strategy_name(StrategyKind s)
{
    switch (s) {
    case StrategyKind::ReturnError: return "return_error";
    case StrategyKind::CustomHandler: return "custom";
    case StrategyKind::Kill: return "kill";
    case StrategyKind::MicroReboot: return "micro_reboot";
    }
    return "?";
}

const CompartmentDecl* SecurityPolicy::find(const std::string& name) const
{
    for (auto& c : compartments)
        if (c.name == name)
            return &c;
    return nullptr;
}

bool SecurityPolicy::allows(const std::string& caller, const std::string& callee,
                            const std::string& symbol) const
{
    for (auto& r : rules)
        if (r.caller == caller && r.callee == callee &&
            (r.symbol == "*" || r.symbol == symbol))
            return true;
    return false;
}

namespace {

std::vector<std::string> split_ws(const std::string& s)
{
    std::istringstream ss(s);
    std::vector<std::string> out;
    std::string t;
    while (ss >> t)
        out.push_back(t);
    return out;
}

std::vector<std::string> split_on(const std::string& s, char sep)
{
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == sep) {
            out.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

bool parse_bool(const std::string& v, int line)
{
    if (v == "true" || v == "1")
        return true;
    if (v == "false" || v == "0")
        return false;
    throw PolicyError(line, "expected bool, got '" + v + "'");
}

StrategyKind parse_strategy(const std::string& v, int line)
{
    if (v == "return_error")
        return StrategyKind::ReturnError;
    if (v == "custom")
        return StrategyKind::CustomHandler;
    if (v == "kill")
        return StrategyKind::Kill;
    if (v == "micro_reboot")
        return StrategyKind::MicroReboot;
    throw PolicyError(line, "unknown strategy '" + v + "'");
}

}  // namespace

SecurityPolicy parse_policy(std::string_view text)
{
    SecurityPolicy policy;
    std::istringstream ss{std::string(text)};
    std::string raw;
    int line = 0;
    while (std::getline(ss, raw)) {
        line++;
        if (auto hash = raw.find('#'); hash != std::string::npos)
            raw.erase(hash);
        auto toks = split_ws(raw);
        if (toks.empty())
            continue;

        if (toks[0] == "compartment") {
            if (toks.size() < 4)
                throw PolicyError(line, "compartment <name> <path> strategy=...");
            CompartmentDecl decl;
            decl.name = toks[1];
            decl.module_paths = split_on(toks[2], ',');
            if (policy.find(decl.name))
                throw PolicyError(line, "duplicate compartment '" + decl.name + "'");
            bool have_strategy = false;
            for (size_t i = 3; i < toks.size(); ++i) {
                auto eq = toks[i].find('=');
                if (eq == std::string::npos)
                    throw PolicyError(line, "expected key=value, got '" + toks[i] + "'");
                std::string key = toks[i].substr(0, eq);
                std::string val = toks[i].substr(eq + 1);
                if (key == "strategy") {
                    decl.strategy = parse_strategy(val, line);
                    have_strategy = true;
                } else if (key == "bound_stack") {
                    decl.bound_stack = parse_bool(val, line);
                } else if (key == "scrub_stack") {
                    decl.scrub_stack = parse_bool(val, line);
                } else {
                    throw PolicyError(line, "unknown key '" + key + "'");
                }
            }
            if (!have_strategy)
                throw PolicyError(line, "compartment needs strategy=");
            policy.compartments.push_back(std::move(decl));
            continue;
        }

        if (toks[0] == "allow") {
            // allow <caller> -> <callee> : <symbol|*>
            if (toks.size() != 6 || toks[2] != "->" || toks[4] != ":")
                throw PolicyError(line, "allow <caller> -> <callee> : <symbol>");
            policy.rules.push_back({toks[1], toks[3], toks[5]});
            continue;
        }

        if (toks[0] == "boot_order") {
            policy.boot_order.assign(toks.begin() + 1, toks.end());
            continue;
        }

        throw PolicyError(line, "unknown key '" + toks[0] + "'");
    }

    // unknown names are a load-time error
    for (auto& r : policy.rules) {
        if (!policy.find(r.caller))
            throw PolicyError(0, "allow rule names unknown compartment '" + r.caller + "'");
        if (!policy.find(r.callee))
            throw PolicyError(0, "allow rule names unknown compartment '" + r.callee + "'");
    }
    for (auto& b : policy.boot_order)
        if (!policy.find(b))
            throw PolicyError(0, "boot_order names unknown compartment '" + b + "'");
    if (policy.boot_order.empty())
        for (auto& c : policy.compartments)
            policy.boot_order.push_back(c.name);
    return policy;
}

}  // namespace compartos
