#pragma once

#include <string>
#include <vector>

#include "compartos/loader.hpp"

namespace compartos {

// Transitive closure of capabilities reachable from the given roots by
// loading through tagged, unsealed LOAD_CAP capabilities. Sentries are
// opaque: they appear in the closure but are never dereferenced, which is
// exactly what makes trampoline metadata unreachable from callers.
std::vector<Capability> capability_closure(const TaggedMemory& mem,
                                           std::vector<Capability> roots);

// Everything a compartment can reach from its captable root.
std::vector<Capability> compartment_closure(const LinkedSystem& sys,
                                            const Compartment& comp);

// True if the closure grants what linkage-based isolation forbids:
// write access to a foreign region, unsealed access to a foreign
// captable, or anything as wide as the loader's root. On violation,
// *why describes the offending capability.
bool closure_violates_isolation(const LinkedSystem& sys, const Compartment& comp,
                                const std::vector<Capability>& closure,
                                std::string* why);

// Compartment graph in DOT text: one node per compartment, one edge per
// minted cross-compartment entry, labeled with the interface symbol.
std::string to_dot(const LinkedSystem& sys);

}  // namespace compartos
