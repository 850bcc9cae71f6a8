#pragma once

#include <cstdint>
#include <string>

namespace compartos {

// Machine addresses are 32-bit so a capability packs unpacked into a
// 16-byte granule. Integer registers and memory words are 64-bit.
using Addr = uint32_t;
using Word = uint64_t;

inline constexpr unsigned kCapSize = 16;

enum Perm : uint8_t {
    PERM_LOAD = 1u << 0,
    PERM_STORE = 1u << 1,
    PERM_EXECUTE = 1u << 2,
    PERM_LOAD_CAP = 1u << 3,
    PERM_STORE_CAP = 1u << 4,
    PERM_ALL = 0x1f,
};

enum class Seal : uint8_t { Unsealed = 0, Sentry = 1 };

struct Capability {
    bool tag = false;
    Addr base = 0;
    Addr length = 0;
    Addr cursor = 0;    // may sit outside [base, top); only dereference is checked
    uint8_t perms = 0;
    Seal seal = Seal::Unsealed;

    uint64_t top() const { return uint64_t(base) + uint64_t(length); }
    bool sealed() const { return seal != Seal::Unsealed; }
    bool has(uint8_t p) const { return (perms & p) == p; }

    // [addr, addr+size) within [base, top)
    bool contains(uint64_t addr, uint64_t size) const
    {
        return addr >= base && addr + size <= top();
    }

    bool operator==(const Capability&) const = default;
};

enum class CapError {
    None = 0,
    TagViolation,
    SealViolation,
    PermViolation,
    MonotonicityViolation,
};

struct CapResult {
    Capability cap;
    CapError err = CapError::None;
    bool ok() const { return err == CapError::None; }
};

// Root of all authority over a machine's memory. memory_size must be > 0;
// enforced at machine construction.
Capability make_root_capability(Addr memory_size);

// Monotonic derivation: shrink bounds, keep perms.
CapResult derive_set_bounds(const Capability& src, Addr new_base, Addr new_len);
// Monotonic derivation: intersect perms, keep bounds.
CapResult derive_and_perms(const Capability& src, uint8_t mask);
// Seal an executable capability as a sentry.
CapResult seal_sentry(const Capability& src);

Capability with_cursor(const Capability& src, Addr cursor);

std::string perms_to_string(uint8_t perms);
const char* cap_error_name(CapError err);

}  // namespace compartos
