#pragma once

#include <string>

#include "compartos/capability.hpp"

namespace compartos {

enum class FaultKind {
    TagViolation,
    SealViolation,
    PermViolation,
    BoundsViolation,
    IllegalInstruction,
};

const char* fault_kind_name(FaultKind kind);

// One architectural trap. Every trap produces exactly one record.
struct FaultRecord {
    FaultKind kind = FaultKind::IllegalInstruction;
    int comp_id = -1;  // compartment identifier, -1 if none
    Addr pc = 0;
    std::string detail;
};

std::string to_string(const FaultRecord& f);

}  // namespace compartos
