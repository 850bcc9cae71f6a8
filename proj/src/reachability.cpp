#include "compartos/reachability.hpp"

#include <deque>
#include <set>
#include <sstream>
#include <tuple>

namespace compartos {

namespace {

using CapKey = std::tuple<Addr, Addr, Addr, uint8_t, uint8_t>;

CapKey key_of(const Capability& c)
{
    return {c.base, c.length, c.cursor, c.perms, uint8_t(c.seal)};
}

bool overlaps(const Capability& c, Addr base, Addr size)
{
    return uint64_t(c.base) < uint64_t(base) + size && uint64_t(base) < c.top();
}

}  // namespace

std::vector<Capability> capability_closure(const TaggedMemory& mem,
                                           std::vector<Capability> roots)
{
    std::vector<Capability> out;
    std::set<CapKey> seen;
    std::deque<Capability> frontier;
    for (Capability& c : roots) {
        if (!c.tag)
            continue;
        if (seen.insert(key_of(c)).second)
            frontier.push_back(c);
    }
    while (!frontier.empty()) {
        Capability c = frontier.front();
        frontier.pop_front();
        out.push_back(c);
        if (c.sealed() || !c.has(PERM_LOAD_CAP))
            continue;
        Addr first = (c.base + kCapSize - 1) & ~Addr(kCapSize - 1);
        for (uint64_t a = first; a + kCapSize <= c.top(); a += kCapSize) {
            if (!mem.granule_tag(Addr(a)))
                continue;
            Capability v = mem.read_cap(Addr(a));
            if (!v.tag)
                continue;
            if (seen.insert(key_of(v)).second)
                frontier.push_back(v);
        }
    }
    return out;
}

std::vector<Capability> compartment_closure(const LinkedSystem& sys,
                                            const Compartment& comp)
{
    CapResult r = derive_and_perms(comp.captable().cap, PERM_LOAD_CAP);
    return capability_closure(sys.machine().memory(), {r.cap});
}

bool closure_violates_isolation(const LinkedSystem& sys, const Compartment& comp,
                                const std::vector<Capability>& closure,
                                std::string* why)
{
    auto fail = [&](const Capability& c, const std::string& what) {
        if (why) {
            std::ostringstream os;
            os << what << " via capability [" << c.base << "," << c.top()
               << ") perms=" << perms_to_string(c.perms);
            *why = os.str();
        }
        return true;
    };
    const Addr mem_size = sys.machine().memory().size();
    for (const Capability& c : closure) {
        if (c.length == mem_size)
            return fail(c, "loader root reachable");
        if (c.sealed())
            continue;  // opaque: conveys no load/store authority
        for (const auto& other : sys.compartments()) {
            if (other->id == comp.id)
                continue;
            for (const Region& reg : other->regions) {
                if (!overlaps(c, reg.base, reg.size))
                    continue;
                if (reg.name == ".captable")
                    return fail(c, "foreign captable of '" + other->name +
                                       "' reachable unsealed");
                if (c.has(PERM_STORE))
                    return fail(c, "writable view of '" + other->name +
                                       "' region " + reg.name);
            }
        }
    }
    return false;
}

std::string to_dot(const LinkedSystem& sys)
{
    std::ostringstream os;
    os << "digraph compartments {\n";
    for (const auto& comp : sys.compartments())
        os << "  \"" << comp->name << "\" [label=\"" << comp->name << "\\n"
           << strategy_name(comp->strategy)
           << (comp->killed ? "\\n(killed)" : "") << "\"];\n";
    for (const LinkEdge& e : sys.edges())
        os << "  \"" << e.caller << "\" -> \"" << e.callee << "\" [label=\""
           << e.symbol << "\"];\n";
    os << "}\n";
    return os.str();
}

}  // namespace compartos
