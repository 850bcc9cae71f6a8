#include "compartos/modfile.hpp"

#include <cstring>

namespace compartos {

namespace {

const char kMagic[4] = {'C', 'P', 'O', 'S'};

struct Writer {
    std::vector<uint8_t> out;

    void u8(uint8_t v) { out.push_back(v); }
    void u16(uint16_t v)
    {
        for (unsigned i = 0; i < 2; ++i)
            out.push_back(uint8_t(v >> (8 * i)));
    }
    void u32(uint32_t v)
    {
        for (unsigned i = 0; i < 4; ++i)
            out.push_back(uint8_t(v >> (8 * i)));
    }
    void u64(uint64_t v)
    {
        for (unsigned i = 0; i < 8; ++i)
            out.push_back(uint8_t(v >> (8 * i)));
    }
    void name(const std::string& s)
    {
        u8(uint8_t(s.size()));
        out.insert(out.end(), s.begin(), s.end());
    }
    void blob(const std::vector<uint8_t>& b)
    {
        u64(b.size());
        out.insert(out.end(), b.begin(), b.end());
    }
};

struct Reader {
    std::span<const uint8_t> in;
    size_t pos = 0;

    void need(size_t n)
    {
        if (pos + n > in.size())
            throw ModfileException(ModfileError::TruncatedInput,
                                   "truncated module file");
    }
    uint8_t u8()
    {
        need(1);
        return in[pos++];
    }
    uint16_t u16()
    {
        need(2);
        uint16_t v = uint16_t(in[pos]) | uint16_t(in[pos + 1]) << 8;
        pos += 2;
        return v;
    }
    uint32_t u32()
    {
        need(4);
        uint32_t v = 0;
        for (unsigned i = 0; i < 4; ++i)
            v |= uint32_t(in[pos + i]) << (8 * i);
        pos += 4;
        return v;
    }
    uint64_t u64()
    {
        need(8);
        uint64_t v = 0;
        for (unsigned i = 0; i < 8; ++i)
            v |= uint64_t(in[pos + i]) << (8 * i);
        pos += 8;
        return v;
    }
    std::string name()
    {
        uint8_t n = u8();
        if (n > kMaxSymbolName)
            throw ModfileException(ModfileError::Malformed, "name too long");
        need(n);
        std::string s(reinterpret_cast<const char*>(in.data() + pos), n);
        pos += n;
        return s;
    }
    std::vector<uint8_t> blob()
    {
        uint64_t n = u64();
        need(n);
        std::vector<uint8_t> b(in.begin() + pos, in.begin() + pos + n);
        pos += n;
        return b;
    }
};

uint8_t checked_enum(uint8_t v, uint8_t max, const char* what)
{
    if (v > max)
        throw ModfileException(ModfileError::Malformed, what);
    return v;
}

}  // namespace

const char* modfile_error_name(ModfileError err)
{
    switch (err) {
    case ModfileError::BadMagic: return "BadMagic";
    case ModfileError::TruncatedInput: return "TruncatedInput";
    case ModfileError::UnknownVersion: return "UnknownVersion";
    case ModfileError::Malformed: return "Malformed";
    }
    return "?";
}

std::vector<uint8_t> encode(const ModuleImage& image)
{
    Writer w;
    w.out.insert(w.out.end(), kMagic, kMagic + 4);
    w.u16(image.format_version);
    w.name(image.name);
    w.u32(uint32_t(image.sections.size()));
    w.u32(uint32_t(image.symbols.size()));
    w.u32(uint32_t(image.relocations.size()));
    for (auto& s : image.sections) {
        w.u8(uint8_t(s.kind));
        w.u64(s.size);
        w.blob(s.payload);
    }
    for (auto& s : image.symbols) {
        w.name(s.name);
        w.u8(uint8_t(s.cls));
        w.u8(uint8_t(s.section));
        w.u64(s.offset);
        w.u64(s.size);
        w.u8(s.is_function ? 1 : 0);
    }
    for (auto& r : image.relocations) {
        w.u8(uint8_t(r.kind));
        w.u8(uint8_t(r.section));
        w.u64(r.offset);
        w.name(r.target);
    }
    return w.out;
}

ModuleImage decode(std::span<const uint8_t> bytes)
{
    Reader r{bytes};
    r.need(4);
    if (std::memcmp(bytes.data(), kMagic, 4) != 0)
        throw ModfileException(ModfileError::BadMagic, "bad magic");
    r.pos = 4;

    ModuleImage image;
    image.format_version = r.u16();
    if (image.format_version != kModuleFormatVersion)
        throw ModfileException(ModfileError::UnknownVersion,
                               "unknown format version");
    image.name = r.name();
    uint32_t nsec = r.u32();
    uint32_t nsym = r.u32();
    uint32_t nrel = r.u32();

    for (uint32_t i = 0; i < nsec; ++i) {
        Section s;
        s.kind = SectionKind(checked_enum(r.u8(), 3, "bad section kind"));
        s.size = r.u64();
        s.payload = r.blob();
        image.sections.push_back(std::move(s));
    }
    for (uint32_t i = 0; i < nsym; ++i) {
        Symbol s;
        s.name = r.name();
        s.cls = SymbolClass(checked_enum(r.u8(), 2, "bad symbol class"));
        s.section = SectionKind(checked_enum(r.u8(), 3, "bad symbol section"));
        s.offset = r.u64();
        s.size = r.u64();
        s.is_function = checked_enum(r.u8(), 1, "bad symbol flag") != 0;
        image.symbols.push_back(std::move(s));
    }
    for (uint32_t i = 0; i < nrel; ++i) {
        Relocation rel;
        rel.kind = RelocKind(checked_enum(r.u8(), 1, "bad relocation kind"));
        rel.section = SectionKind(checked_enum(r.u8(), 3, "bad reloc section"));
        rel.offset = r.u64();
        rel.target = r.name();
        image.relocations.push_back(std::move(rel));
    }
    if (r.pos != bytes.size())
        throw ModfileException(ModfileError::Malformed, "trailing bytes");
    return image;
}

}  // namespace compartos
