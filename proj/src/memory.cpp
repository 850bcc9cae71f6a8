#include "compartos/memory.hpp"

#include <cassert>
#include <cstring>
#include <stdexcept>

namespace compartos {

TaggedMemory::TaggedMemory(Addr size)
    : bytes_(size, 0), tags_((size + kCapSize - 1) / kCapSize, false)
{
    if (size == 0)
        throw std::invalid_argument("memory size must be positive");
}

void TaggedMemory::clear_tags_over(Addr addr, Addr size)
{
    Addr first = addr / kCapSize;
    Addr last = (addr + size - 1) / kCapSize;
    for (Addr g = first; g <= last && g < tags_.size(); ++g)
        tags_[g] = false;
}

void TaggedMemory::write_bytes(Addr addr, std::span<const uint8_t> data)
{
    assert(uint64_t(addr) + data.size() <= bytes_.size());
    if (data.empty())
        return;
    std::memcpy(bytes_.data() + addr, data.data(), data.size());
    clear_tags_over(addr, Addr(data.size()));
}

void TaggedMemory::read_bytes(Addr addr, std::span<uint8_t> out) const
{
    assert(uint64_t(addr) + out.size() <= bytes_.size());
    if (!out.empty())
        std::memcpy(out.data(), bytes_.data() + addr, out.size());
}

Word TaggedMemory::read_word(Addr addr) const
{
    assert(uint64_t(addr) + 8 <= bytes_.size());
    Word w = 0;
    for (unsigned i = 0; i < 8; ++i)
        w |= Word(bytes_[addr + i]) << (8 * i);
    return w;
}

void TaggedMemory::write_word(Addr addr, Word value)
{
    assert(uint64_t(addr) + 8 <= bytes_.size());
    for (unsigned i = 0; i < 8; ++i)
        bytes_[addr + i] = uint8_t(value >> (8 * i));
    clear_tags_over(addr, 8);
}

static void put_u32(uint8_t* p, uint32_t v)
{
    for (unsigned i = 0; i < 4; ++i)
        p[i] = uint8_t(v >> (8 * i));
}

static uint32_t get_u32(const uint8_t* p)
{
    uint32_t v = 0;
    for (unsigned i = 0; i < 4; ++i)
        v |= uint32_t(p[i]) << (8 * i);
    return v;
}

// In-memory capability layout (little-endian):
//   base u32 | length u32 | cursor u32 | perms u8 | seal u8 | zero u16
Capability TaggedMemory::read_cap(Addr addr) const
{
    assert(addr % kCapSize == 0);
    assert(uint64_t(addr) + kCapSize <= bytes_.size());
    const uint8_t* p = bytes_.data() + addr;
    Capability c;
    c.base = get_u32(p);
    c.length = get_u32(p + 4);
    c.cursor = get_u32(p + 8);
    c.perms = p[12] & PERM_ALL;
    c.seal = p[13] == 1 ? Seal::Sentry : Seal::Unsealed;
    c.tag = tags_[addr / kCapSize];
    return c;
}

void TaggedMemory::write_cap(Addr addr, const Capability& cap)
{
    assert(addr % kCapSize == 0);
    assert(uint64_t(addr) + kCapSize <= bytes_.size());
    uint8_t* p = bytes_.data() + addr;
    put_u32(p, cap.base);
    put_u32(p + 4, cap.length);
    put_u32(p + 8, cap.cursor);
    p[12] = cap.perms;
    p[13] = cap.seal == Seal::Sentry ? 1 : 0;
    p[14] = 0;
    p[15] = 0;
    tags_[addr / kCapSize] = cap.tag;
}

bool TaggedMemory::granule_tag(Addr addr) const
{
    return tags_[addr / kCapSize];
}

void TaggedMemory::clear_tag(Addr addr)
{
    tags_[addr / kCapSize] = false;
}

std::vector<Addr> TaggedMemory::tagged_granules() const
{
    std::vector<Addr> out;
    for (Addr g = 0; g < tags_.size(); ++g)
        if (tags_[g])
            out.push_back(g * kCapSize);
    return out;
}

}  // namespace compartos
