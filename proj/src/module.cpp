#include "compartos/module.hpp"

#include <algorithm>

#include "compartos/isa.hpp"

namespace compartos {

const char* section_name(SectionKind kind)
{
    switch (kind) {
    case SectionKind::Code: return ".text";
    case SectionKind::ReadOnlyData: return ".rodata";
    case SectionKind::Data: return ".data";
    case SectionKind::ZeroFill: return ".bss";
    }
    return "?";
}

std::optional<SectionKind> section_kind_from_name(const std::string& name)
{
    if (name == ".text")
        return SectionKind::Code;
    if (name == ".rodata")
        return SectionKind::ReadOnlyData;
    if (name == ".data")
        return SectionKind::Data;
    if (name == ".bss")
        return SectionKind::ZeroFill;
    return std::nullopt;
}

const char* symbol_class_name(SymbolClass cls)
{
    switch (cls) {
    case SymbolClass::Local: return "local";
    case SymbolClass::Global: return "global";
    case SymbolClass::Interface: return "interface";
    }
    return "?";
}

const Section* ModuleImage::find_section(SectionKind kind) const
{
    for (auto& s : sections)
        if (s.kind == kind)
            return &s;
    return nullptr;
}

const Symbol* ModuleImage::find_symbol(const std::string& sym) const
{
    for (auto& s : symbols)
        if (s.name == sym)
            return &s;
    return nullptr;
}

static bool valid_name(const std::string& name)
{
    if (name.empty() || name.size() > kMaxSymbolName)
        return false;
    return std::all_of(name.begin(), name.end(), [](unsigned char c) {
        return c < 0x80 && (std::isalnum(c) || c == '_' || c == '.' || c == '$');
    });
}

std::vector<Diagnostic> validate(const ModuleImage& image)
{
    std::vector<Diagnostic> out;
    auto diag = [&](std::string msg, std::string ctx) {
        out.push_back({std::move(msg), std::move(ctx)});
    };

    if (!valid_name(image.name))
        diag("bad module name", image.name);

    bool seen[4] = {false, false, false, false};
    for (auto& s : image.sections) {
        unsigned k = unsigned(s.kind);
        if (k > 3) {
            diag("unknown section kind", "");
            continue;
        }
        if (seen[k])
            diag("duplicate section", section_name(s.kind));
        seen[k] = true;
        if (s.kind == SectionKind::ZeroFill) {
            if (!s.payload.empty())
                diag(".bss carries payload", section_name(s.kind));
        } else if (s.size != s.payload.size()) {
            diag("section size mismatch", section_name(s.kind));
        }
    }

    for (size_t i = 0; i < image.symbols.size(); ++i) {
        const Symbol& sym = image.symbols[i];
        if (!valid_name(sym.name)) {
            diag("bad symbol name", sym.name);
            continue;
        }
        for (size_t j = i + 1; j < image.symbols.size(); ++j)
            if (image.symbols[j].name == sym.name)
                diag("duplicate symbol", sym.name);
        const Section* sec = image.find_section(sym.section);
        if (!sec) {
            diag("symbol in missing section", sym.name);
            continue;
        }
        if (sym.offset + sym.size > sec->size)
            diag("symbol outside its section", sym.name);
        if (sym.cls == SymbolClass::Interface && !sym.is_function)
            diag("interface symbol must be a function", sym.name);
    }

    const Section* text = image.find_section(SectionKind::Code);
    for (auto& rel : image.relocations) {
        if (!valid_name(rel.target)) {
            diag("bad relocation target", rel.target);
            continue;
        }
        const Section* sec = image.find_section(rel.section);
        if (!sec) {
            diag("relocation in missing section", rel.target);
            continue;
        }
        if (rel.kind == RelocKind::GprelSlot) {
            if (rel.section != SectionKind::Code || !text) {
                diag("GPREL_SLOT outside .text", rel.target);
                continue;
            }
            if (rel.offset % kInstrSize != 0 ||
                rel.offset + kInstrSize > text->size) {
                diag("GPREL_SLOT not at an instruction", rel.target);
                continue;
            }
            if (text->payload[rel.offset] != uint8_t(Opcode::Clc))
                diag("GPREL_SLOT site is not a CLC instruction", rel.target);
        } else {
            if (rel.offset + 8 > sec->size ||
                rel.section == SectionKind::ZeroFill)
                diag("ABS relocation site out of range", rel.target);
            // ABS targets must be defined locally; cross-module data access
            // goes through the captable.
            if (!image.find_symbol(rel.target))
                diag("ABS relocation to undefined symbol", rel.target);
        }
    }
    return out;
}

}  // namespace compartos
