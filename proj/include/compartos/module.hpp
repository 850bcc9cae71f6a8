#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace compartos {

inline constexpr uint16_t kModuleFormatVersion = 1;
inline constexpr size_t kMaxSymbolName = 63;  // ASCII

enum class SectionKind : uint8_t { Code = 0, ReadOnlyData, Data, ZeroFill };

const char* section_name(SectionKind kind);  // ".text" etc.
std::optional<SectionKind> section_kind_from_name(const std::string& name);

struct Section {
    SectionKind kind = SectionKind::Code;
    uint64_t size = 0;             // == payload.size() except for ZeroFill
    std::vector<uint8_t> payload;  // empty for ZeroFill

    bool operator==(const Section&) const = default;
};

// Local, Global, Interface are declared by the module; External is the
// importing side and only materializes in the loader's captable.
enum class SymbolClass : uint8_t { Local = 0, Global, Interface };

const char* symbol_class_name(SymbolClass cls);

struct Symbol {
    std::string name;
    SymbolClass cls = SymbolClass::Local;
    SectionKind section = SectionKind::Code;
    uint64_t offset = 0;
    uint64_t size = 0;
    bool is_function = false;

    bool operator==(const Symbol&) const = default;
};

enum class RelocKind : uint8_t {
    GprelSlot = 0,  // captable index patched into a CLC immediate
    AbsInSection,   // absolute address of the target written at the site
};

struct Relocation {
    RelocKind kind = RelocKind::GprelSlot;
    SectionKind section = SectionKind::Code;
    uint64_t offset = 0;
    std::string target;  // possibly undefined here: an external

    bool operator==(const Relocation&) const = default;
};

struct ModuleImage {
    std::string name;
    uint16_t format_version = kModuleFormatVersion;
    std::vector<Section> sections;
    std::vector<Symbol> symbols;
    std::vector<Relocation> relocations;

    const Section* find_section(SectionKind kind) const;
    const Symbol* find_symbol(const std::string& name) const;

    bool operator==(const ModuleImage&) const = default;
};

struct Diagnostic {
    std::string message;
    std::string context;  // symbol or section name
};

// Empty iff all structural invariants hold.
std::vector<Diagnostic> validate(const ModuleImage& image);

}  // namespace compartos
