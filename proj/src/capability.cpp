#include "compartos/capability.hpp"

namespace compartos {

Capability make_root_capability(Addr memory_size)
{
    Capability c;
    c.tag = true;
    c.base = 0;
    c.length = memory_size;
    c.cursor = 0;
    c.perms = PERM_ALL;
    c.seal = Seal::Unsealed;
    return c;
}

CapResult derive_set_bounds(const Capability& src, Addr new_base, Addr new_len)
{
    if (!src.tag)
        return {{}, CapError::TagViolation};
    if (src.sealed())
        return {{}, CapError::SealViolation};
    uint64_t lo = new_base;
    uint64_t hi = uint64_t(new_base) + uint64_t(new_len);
    if (lo < src.base || hi > src.top())
        return {{}, CapError::MonotonicityViolation};
    Capability out = src;
    out.base = new_base;
    out.length = new_len;
    out.cursor = new_base;
    return {out, CapError::None};
}

CapResult derive_and_perms(const Capability& src, uint8_t mask)
{
    if (!src.tag)
        return {{}, CapError::TagViolation};
    if (src.sealed())
        return {{}, CapError::SealViolation};
    Capability out = src;
    out.perms = src.perms & mask & PERM_ALL;
    return {out, CapError::None};
}

CapResult seal_sentry(const Capability& src)
{
    if (!src.tag)
        return {{}, CapError::TagViolation};
    if (src.sealed())
        return {{}, CapError::SealViolation};
    if (!src.has(PERM_EXECUTE))
        return {{}, CapError::PermViolation};
    Capability out = src;
    out.seal = Seal::Sentry;
    return {out, CapError::None};
}

Capability with_cursor(const Capability& src, Addr cursor)
{
    Capability out = src;
    out.cursor = cursor;
    return out;
}

std::string perms_to_string(uint8_t perms)
{
    std::string s;
    auto add = [&](uint8_t p, const char* n) {
        if (perms & p) {
            if (!s.empty())
                s += '|';
            s += n;
        }
    };
    add(PERM_LOAD, "LOAD");
    add(PERM_STORE, "STORE");
    add(PERM_EXECUTE, "EXECUTE");
    add(PERM_LOAD_CAP, "LOAD_CAP");
    add(PERM_STORE_CAP, "STORE_CAP");
    return s.empty() ? "-" : s;
}

const char* cap_error_name(CapError err)
{
    switch (err) {
    case CapError::None: return "None";
    case CapError::TagViolation: return "TagViolation";
    case CapError::SealViolation: return "SealViolation";
    case CapError::PermViolation: return "PermViolation";
    case CapError::MonotonicityViolation: return "MonotonicityViolation";
    }
    return "?";
}

}  // namespace compartos
