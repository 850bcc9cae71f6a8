#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "compartos/capability.hpp"

namespace compartos {

// Flat byte array plus one validity tag per capability-aligned granule.
// Raw byte writes over a granule clear its tag; a capability loaded from
// memory is valid only if its granule tag is still set.
class TaggedMemory {
public:
    explicit TaggedMemory(Addr size);

    Addr size() const { return Addr(bytes_.size()); }

    // Unchecked accessors; callers perform capability checks first.
    void write_bytes(Addr addr, std::span<const uint8_t> data);
    void read_bytes(Addr addr, std::span<uint8_t> out) const;
    Word read_word(Addr addr) const;
    void write_word(Addr addr, Word value);

    // addr must be 16-byte aligned.
    Capability read_cap(Addr addr) const;
    void write_cap(Addr addr, const Capability& cap);

    bool granule_tag(Addr addr) const;
    void clear_tag(Addr addr);
    std::vector<Addr> tagged_granules() const;

    const uint8_t* data() const { return bytes_.data(); }

private:
    void clear_tags_over(Addr addr, Addr size);

    std::vector<uint8_t> bytes_;
    std::vector<bool> tags_;  // one per 16-byte granule
};

}  // namespace compartos
