#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "compartos/machine.hpp"

using namespace compartos;

namespace {

// Brute-force oracle for the fixed check order: Tag, Seal, Perm, Bounds.
std::optional<FaultKind> oracle_check(const Capability& cap, int64_t offset,
                                      unsigned size, uint8_t need_perm,
                                      bool cap_access)
{
    if (!cap.tag)
        return FaultKind::TagViolation;
    if (cap.sealed())
        return FaultKind::SealViolation;
    if ((cap.perms & need_perm) != need_perm)
        return FaultKind::PermViolation;
    int64_t addr = int64_t(cap.cursor) + offset;
    if (cap_access && addr % kCapSize != 0)
        return FaultKind::BoundsViolation;
    if (addr < 0 || uint64_t(addr) < cap.base ||
        uint64_t(addr) + size > cap.top())
        return FaultKind::BoundsViolation;
    return std::nullopt;
}

}  // namespace

TEST_CASE("byte writes clear the covering granule tag")
{
    TaggedMemory mem(256);
    Capability root = make_root_capability(256);
    Capability v = derive_set_bounds(root, 16, 16).cap;
    mem.write_cap(16, v);
    CHECK(mem.granule_tag(16));
    mem.write_word(24, 0);  // second half of the granule
    CHECK(!mem.granule_tag(16));
    Capability back = mem.read_cap(16);
    CHECK(!back.tag);
}

TEST_CASE("capability store/load round-trips all fields")
{
    TaggedMemory mem(256);
    Capability root = make_root_capability(256);
    Capability v = derive_set_bounds(root, 32, 64).cap;
    v = derive_and_perms(v, PERM_LOAD | PERM_EXECUTE).cap;
    v = seal_sentry(v).cap;
    v.cursor = 48;
    mem.write_cap(160, v);
    CHECK(mem.read_cap(160) == v);
}

TEST_CASE("zero-size memory is rejected")
{
    CHECK_THROWS_AS(TaggedMemory(0), std::invalid_argument);
    CHECK_THROWS_AS(Machine(0), std::invalid_argument);
}

TEST_CASE("10k random accesses match the brute-force oracle")
{
    constexpr Addr kMem = 4096;
    TaggedMemory mem(kMem);
    std::mt19937_64 rng(0xACCE55);

    Capability root = make_root_capability(kMem);
    // seed some tagged granules so cap loads can succeed
    for (Addr a = 0; a < kMem; a += 64)
        mem.write_cap(a, derive_set_bounds(root, a, 16).cap);

    for (int i = 0; i < 10000; ++i) {
        Capability cap = root;
        cap.tag = rng() % 8 != 0;
        if (rng() % 8 == 0)
            cap.seal = Seal::Sentry;
        cap.perms = uint8_t(rng() & PERM_ALL);
        Addr base = Addr(rng() % kMem);
        cap.base = base;
        cap.length = Addr(rng() % (kMem - base));
        cap.cursor = Addr(rng() % (kMem + 64));
        int64_t offset = int64_t(rng() % 128) - 64;

        switch (rng() % 4) {
        case 0: {
            auto r = load_word(mem, cap, offset);
            CHECK(r.fault == oracle_check(cap, offset, 8, PERM_LOAD, false));
            break;
        }
        case 1: {
            auto f = store_word(mem, cap, offset, rng());
            CHECK(f == oracle_check(cap, offset, 8, PERM_STORE, false));
            break;
        }
        case 2: {
            auto r = load_cap(mem, cap, offset);
            CHECK(r.fault ==
                  oracle_check(cap, offset, kCapSize, PERM_LOAD_CAP, true));
            break;
        }
        case 3: {
            auto f = store_cap(mem, cap, offset, root);
            CHECK(f ==
                  oracle_check(cap, offset, kCapSize, PERM_STORE_CAP, true));
            break;
        }
        }
    }
}

TEST_CASE("insecure mode only enforces physical limits")
{
    constexpr Addr kMem = 4096;
    TaggedMemory mem(kMem);
    Capability cap;  // untagged, no perms
    cap.cursor = 128;
    CHECK(load_word(mem, cap, 0, true).ok());
    CHECK(!store_word(mem, cap, 0, 1, true).has_value());
    cap.cursor = kMem;
    CHECK(load_word(mem, cap, 0, true).fault == FaultKind::BoundsViolation);
}
