#include "compartos/assembler.hpp"

#include <algorithm>
#include <cctype>
#include <map>
#include <optional>
#include <sstream>
#include <vector>

#include "compartos/isa.hpp"

namespace compartos {

namespace {

struct PendingInstr {
    Instruction instr;
    uint64_t offset = 0;           // within .text
    int line = 0;
    std::string branch_label;      // Beq/Bne target, resolved in pass 2
    std::string gprel_symbol;      // cap(sym) operand
};

struct PendingWord {
    uint64_t offset = 0;
    SectionKind section = SectionKind::Data;
    int line = 0;
    std::string abs_symbol;  // if set, an ABS_IN_SECTION relocation
    uint64_t value = 0;
};

struct LabelDef {
    SectionKind section;
    uint64_t offset;
    int line;
};

struct Parser {
    std::string_view src;
    std::string module_name;

    std::map<SectionKind, std::vector<uint8_t>> payloads;
    std::map<SectionKind, uint64_t> sizes;  // includes .bss
    std::vector<PendingInstr> instrs;
    std::vector<PendingWord> words;
    // insertion-ordered labels
    std::vector<std::pair<std::string, LabelDef>> labels;
    std::map<std::string, std::pair<SymbolClass, int>> declared;

    std::optional<SectionKind> section;
    int line = 0;

    [[noreturn]] void syntax(const std::string& msg)
    {
        throw AsmError(AsmErrorKind::SyntaxError, line, msg);
    }

    const LabelDef* find_label(const std::string& name) const
    {
        for (auto& [n, def] : labels)
            if (n == name)
                return &def;
        return nullptr;
    }

    uint64_t& cursize()
    {
        if (!section)
            syntax("statement before .section");
        return sizes[*section];
    }

    static std::vector<std::string> tokenize(std::string stmt)
    {
        // split on whitespace and commas; keep "imm(reg)" together
        std::vector<std::string> toks;
        std::string cur;
        for (char ch : stmt) {
            if (std::isspace(uint8_t(ch)) || ch == ',') {
                if (!cur.empty()) {
                    toks.push_back(cur);
                    cur.clear();
                }
            } else {
                cur += ch;
            }
        }
        if (!cur.empty())
            toks.push_back(cur);
        return toks;
    }

    int64_t parse_int(const std::string& t)
    {
        try {
            size_t used = 0;
            long long v = std::stoll(t, &used, 0);
            if (used != t.size())
                syntax("bad integer '" + t + "'");
            return v;
        } catch (const AsmError&) {
            throw;
        } catch (...) {
            syntax("bad integer '" + t + "'");
        }
    }

    uint8_t parse_xreg(const std::string& t)
    {
        if (t.size() == 2 && t[0] == 'x' && t[1] >= '0' && t[1] <= '7')
            return uint8_t(t[1] - '0');
        syntax("expected integer register, got '" + t + "'");
    }

    uint8_t parse_creg(const std::string& t)
    {
        if (t.size() == 2 && t[0] == 'c' && t[1] >= '0' && t[1] <= '7')
            return uint8_t(t[1] - '0');
        if (t == "cgp")
            return CREG_CGP;
        if (t == "csp")
            return CREG_CSP;
        if (t == "cra")
            return CREG_CRA;
        if (t == "pcc")
            return CREG_PCC;
        if (t == "ctx")
            return CREG_CTX;
        syntax("expected capability register, got '" + t + "'");
    }

    // "imm(creg)" -> (imm, reg)
    std::pair<int64_t, uint8_t> parse_mem(const std::string& t)
    {
        size_t open = t.find('(');
        if (open == std::string::npos || t.back() != ')')
            syntax("expected imm(reg), got '" + t + "'");
        int64_t imm = open == 0 ? 0 : parse_int(t.substr(0, open));
        uint8_t reg = parse_creg(t.substr(open + 1, t.size() - open - 2));
        return {imm, reg};
    }

    void define_label(const std::string& name)
    {
        if (!section)
            syntax("label before .section");
        if (find_label(name))
            throw AsmError(AsmErrorKind::DuplicateSymbol, line,
                           "duplicate label '" + name + "'");
        labels.emplace_back(name, LabelDef{*section, cursize(), line});
    }

    void emit_instr(Instruction in, std::string branch = {},
                    std::string gprel = {})
    {
        if (section != SectionKind::Code)
            syntax("instruction outside .text");
        PendingInstr p;
        p.instr = in;
        p.offset = cursize();
        p.line = line;
        p.branch_label = std::move(branch);
        p.gprel_symbol = std::move(gprel);
        instrs.push_back(std::move(p));
        cursize() += kInstrSize;
    }

    void handle_directive(const std::vector<std::string>& toks)
    {
        const std::string& d = toks[0];
        if (d == ".section") {
            if (toks.size() != 2)
                syntax(".section takes one argument");
            auto kind = section_kind_from_name(toks[1]);
            if (!kind)
                syntax("unknown section '" + toks[1] + "'");
            section = *kind;
            sizes.try_emplace(*kind, 0);
            return;
        }
        if (d == ".global" || d == ".interface" || d == ".local") {
            if (toks.size() != 2)
                syntax(d + " takes one symbol");
            SymbolClass cls = d == ".global"      ? SymbolClass::Global
                              : d == ".interface" ? SymbolClass::Interface
                                                  : SymbolClass::Local;
            auto [it, fresh] = declared.try_emplace(toks[1], cls, line);
            if (!fresh && it->second.first != cls)
                syntax("conflicting visibility for '" + toks[1] + "'");
            return;
        }
        if (d == ".word") {
            if (toks.size() != 2)
                syntax(".word takes one argument");
            if (!section || section == SectionKind::Code ||
                section == SectionKind::ZeroFill)
                syntax(".word only in .rodata/.data");
            PendingWord w;
            w.offset = cursize();
            w.section = *section;
            w.line = line;
            if (std::isdigit(uint8_t(toks[1][0])) || toks[1][0] == '-')
                w.value = uint64_t(parse_int(toks[1]));
            else
                w.abs_symbol = toks[1];
            words.push_back(std::move(w));
            cursize() += 8;
            return;
        }
        if (d == ".zero") {
            if (toks.size() != 2)
                syntax(".zero takes a byte count");
            int64_t n = parse_int(toks[1]);
            if (n < 0)
                syntax(".zero count must be non-negative");
            if (!section)
                syntax(".zero before .section");
            if (section == SectionKind::Code && n % kInstrSize != 0)
                syntax(".zero in .text must be instruction aligned");
            cursize() += uint64_t(n);
            return;
        }
        syntax("unknown directive '" + d + "'");
    }

    void handle_instruction(const std::vector<std::string>& toks)
    {
        const std::string& m = toks[0];
        auto want = [&](size_t n) {
            if (toks.size() != n + 1)
                syntax(m + " takes " + std::to_string(n) + " operands");
        };
        Instruction in;

        if (m == "halt" || m == "cret" || m == "yield") {
            want(0);
            in.op = m == "halt"   ? Opcode::Halt
                    : m == "cret" ? Opcode::CRet
                                  : Opcode::Yield;
            emit_instr(in);
            return;
        }
        if (m == "li") {
            want(2);
            in.op = Opcode::Li;
            in.rd = parse_xreg(toks[1]);
            in.imm = int32_t(parse_int(toks[2]));
            emit_instr(in);
            return;
        }
        if (m == "add" || m == "sub") {
            want(3);
            in.op = m == "add" ? Opcode::Add : Opcode::Sub;
            in.rd = parse_xreg(toks[1]);
            in.rs1 = parse_xreg(toks[2]);
            in.rs2 = parse_xreg(toks[3]);
            emit_instr(in);
            return;
        }
        if (m == "beq" || m == "bne") {
            want(3);
            in.op = m == "beq" ? Opcode::Beq : Opcode::Bne;
            in.rs1 = parse_xreg(toks[1]);
            in.rs2 = parse_xreg(toks[2]);
            emit_instr(in, toks[3]);
            return;
        }
        if (m == "cmove") {
            want(2);
            in.op = Opcode::CMove;
            in.rd = parse_creg(toks[1]);
            in.rs1 = parse_creg(toks[2]);
            emit_instr(in);
            return;
        }
        if (m == "cincoffset" || m == "candperm") {
            want(3);
            in.op = m == "cincoffset" ? Opcode::CIncOffset : Opcode::CAndPerm;
            in.rd = parse_creg(toks[1]);
            in.rs1 = parse_creg(toks[2]);
            in.imm = int32_t(parse_int(toks[3]));
            emit_instr(in);
            return;
        }
        if (m == "cincoffsetr" || m == "csetbounds") {
            want(3);
            in.op = m == "cincoffsetr" ? Opcode::CIncOffsetReg
                                       : Opcode::CSetBounds;
            in.rd = parse_creg(toks[1]);
            in.rs1 = parse_creg(toks[2]);
            in.rs2 = parse_xreg(toks[3]);
            emit_instr(in);
            return;
        }
        if (m == "csealentry") {
            want(2);
            in.op = Opcode::CSealEntry;
            in.rd = parse_creg(toks[1]);
            in.rs1 = parse_creg(toks[2]);
            emit_instr(in);
            return;
        }
        if (m == "clc") {
            want(2);
            in.op = Opcode::Clc;
            in.rd = parse_creg(toks[1]);
            const std::string& t = toks[2];
            if (t.rfind("cap(", 0) == 0 && t.back() == ')') {
                // GPREL access through the captable; slot patched at load
                in.rs1 = CREG_CGP;
                in.imm = 0;
                emit_instr(in, {}, t.substr(4, t.size() - 5));
            } else {
                auto [imm, reg] = parse_mem(t);
                in.rs1 = reg;
                in.imm = int32_t(imm);
                emit_instr(in);
            }
            return;
        }
        if (m == "clcr" || m == "cscr") {
            want(2);
            in.op = m == "clcr" ? Opcode::Clcr : Opcode::Cscr;
            in.rd = parse_creg(toks[1]);
            auto [imm, reg] = parse_mem(toks[2]);
            in.rs1 = reg;
            in.imm = int32_t(imm);
            emit_instr(in);
            return;
        }
        if (m == "clw" || m == "csw") {
            want(2);
            in.op = m == "clw" ? Opcode::Clw : Opcode::Csw;
            in.rd = parse_xreg(toks[1]);
            auto [imm, reg] = parse_mem(toks[2]);
            in.rs1 = reg;
            in.imm = int32_t(imm);
            emit_instr(in);
            return;
        }
        if (m == "cjalr") {
            want(1);
            in.op = Opcode::CJalr;
            in.rs1 = parse_creg(toks[1]);
            emit_instr(in);
            return;
        }
        if (m == "trapif") {
            if (toks.size() != 2 && toks.size() != 3)
                syntax("trapif takes one or two operands");
            in.op = Opcode::TrapIf;
            in.rs1 = parse_xreg(toks[1]);
            if (toks.size() == 3)
                in.imm = int32_t(parse_int(toks[2]));
            emit_instr(in);
            return;
        }
        if (m == "getcompid" || m == "setcompid") {
            want(1);
            in.op = m == "getcompid" ? Opcode::GetCompId : Opcode::SetCompId;
            if (m == "getcompid")
                in.rd = parse_xreg(toks[1]);
            else
                in.rs1 = parse_xreg(toks[1]);
            emit_instr(in);
            return;
        }
        if (m == "cgetaddr" || m == "cgetbase" || m == "cgetlen") {
            want(2);
            in.op = m == "cgetaddr"   ? Opcode::CGetAddr
                    : m == "cgetbase" ? Opcode::CGetBase
                                      : Opcode::CGetLen;
            in.rd = parse_xreg(toks[1]);
            in.rs1 = parse_creg(toks[2]);
            emit_instr(in);
            return;
        }
        throw AsmError(AsmErrorKind::UnknownMnemonic, line,
                       "unknown mnemonic '" + m + "'");
    }

    void parse_line(std::string text)
    {
        if (auto hash = text.find('#'); hash != std::string::npos)
            text.erase(hash);
        // labels, possibly followed by a statement on the same line
        for (;;) {
            size_t start = text.find_first_not_of(" \t");
            if (start == std::string::npos)
                return;
            size_t colon = text.find(':');
            size_t word_end = text.find_first_of(" \t", start);
            if (colon != std::string::npos &&
                (word_end == std::string::npos || colon < word_end)) {
                define_label(text.substr(start, colon - start));
                text.erase(0, colon + 1);
                continue;
            }
            break;
        }
        auto toks = tokenize(text);
        if (toks.empty())
            return;
        if (toks[0][0] == '.' && toks[0] != "..")
            handle_directive(toks);
        else
            handle_instruction(toks);
    }

    ModuleImage finish()
    {
        ModuleImage image;
        image.name = module_name;

        // resolve branches and lay out .text
        for (auto& p : instrs) {
            if (!p.branch_label.empty()) {
                const LabelDef* def = find_label(p.branch_label);
                line = p.line;
                if (!def)
                    syntax("undefined branch target '" + p.branch_label + "'");
                if (def->section != SectionKind::Code)
                    syntax("branch target outside .text");
                p.instr.imm = int32_t(int64_t(def->offset) - int64_t(p.offset));
            }
        }

        for (auto& [kind, size] : sizes) {
            Section sec;
            sec.kind = kind;
            sec.size = size;
            if (kind != SectionKind::ZeroFill)
                sec.payload.assign(size, 0);
            image.sections.push_back(std::move(sec));
        }
        std::sort(image.sections.begin(), image.sections.end(),
                  [](auto& a, auto& b) { return a.kind < b.kind; });

        auto payload_of = [&](SectionKind kind) -> std::vector<uint8_t>& {
            for (auto& s : image.sections)
                if (s.kind == kind)
                    return s.payload;
            throw std::logic_error("missing section");
        };

        for (auto& p : instrs) {
            auto bytes = encode_instruction(p.instr);
            std::copy(bytes.begin(), bytes.end(),
                      payload_of(SectionKind::Code).begin() + p.offset);
            if (!p.gprel_symbol.empty())
                image.relocations.push_back({RelocKind::GprelSlot,
                                             SectionKind::Code, p.offset,
                                             p.gprel_symbol});
        }
        for (auto& w : words) {
            auto& payload = payload_of(w.section);
            for (unsigned i = 0; i < 8; ++i)
                payload[w.offset + i] = uint8_t(w.value >> (8 * i));
            if (!w.abs_symbol.empty())
                image.relocations.push_back({RelocKind::AbsInSection,
                                             w.section, w.offset,
                                             w.abs_symbol});
        }

        // symbols: every non-".L" label; size runs to the next label in the
        // same section or the section end
        for (size_t i = 0; i < labels.size(); ++i) {
            auto& [name, def] = labels[i];
            if (name.rfind(".L", 0) == 0)
                continue;
            Symbol sym;
            sym.name = name;
            sym.section = def.section;
            sym.offset = def.offset;
            sym.is_function = def.section == SectionKind::Code;
            uint64_t end = sizes[def.section];
            for (auto& [other_name, other] : labels) {
                if (other.section == def.section && other.offset > def.offset &&
                    other.offset < end && other_name.rfind(".L", 0) != 0)
                    end = other.offset;
            }
            sym.size = end - def.offset;
            if (auto it = declared.find(name); it != declared.end()) {
                sym.cls = it->second.first;
                if (sym.cls == SymbolClass::Interface && !sym.is_function) {
                    line = it->second.second;
                    syntax("interface symbol '" + name +
                           "' must be a function");
                }
            }
            image.symbols.push_back(std::move(sym));
        }

        for (auto& [name, decl] : declared) {
            if (!find_label(name)) {
                line = decl.second;
                syntax("visibility declared for undefined symbol '" + name +
                       "'");
            }
        }
        return image;
    }
};

}  // namespace

ModuleImage assemble(std::string_view source, const std::string& module_name)
{
    Parser p;
    p.src = source;
    p.module_name = module_name;

    std::istringstream ss{std::string(source)};
    std::string text;
    while (std::getline(ss, text)) {
        p.line++;
        p.parse_line(text);
    }
    return p.finish();
}

}  // namespace compartos
