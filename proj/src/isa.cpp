#include "compartos/isa.hpp"

#include <cstdio>

namespace compartos {

std::array<uint8_t, kInstrSize> encode_instruction(const Instruction& in)
{
    std::array<uint8_t, kInstrSize> b{};
    b[0] = uint8_t(in.op);
    b[1] = in.rd;
    b[2] = in.rs1;
    b[3] = in.rs2;
    uint32_t imm = uint32_t(in.imm);
    for (unsigned i = 0; i < 4; ++i)
        b[4 + i] = uint8_t(imm >> (8 * i));
    return b;
}

std::optional<Instruction> decode_instruction(std::span<const uint8_t> bytes)
{
    if (bytes.size() < kInstrSize)
        return std::nullopt;
    if (bytes[0] >= uint8_t(Opcode::kCount))
        return std::nullopt;
    Instruction in;
    in.op = Opcode(bytes[0]);
    in.rd = bytes[1];
    in.rs1 = bytes[2];
    in.rs2 = bytes[3];
    uint32_t imm = 0;
    for (unsigned i = 0; i < 4; ++i)
        imm |= uint32_t(bytes[4 + i]) << (8 * i);
    in.imm = int32_t(imm);
    return in;
}

const char* opcode_name(Opcode op)
{
    switch (op) {
    case Opcode::Halt: return "halt";
    case Opcode::Li: return "li";
    case Opcode::Add: return "add";
    case Opcode::Sub: return "sub";
    case Opcode::Beq: return "beq";
    case Opcode::Bne: return "bne";
    case Opcode::CMove: return "cmove";
    case Opcode::CIncOffset: return "cincoffset";
    case Opcode::CIncOffsetReg: return "cincoffsetr";
    case Opcode::CSetBounds: return "csetbounds";
    case Opcode::CAndPerm: return "candperm";
    case Opcode::CSealEntry: return "csealentry";
    case Opcode::Clc: return "clc";
    case Opcode::Clw: return "clw";
    case Opcode::Csw: return "csw";
    case Opcode::Clcr: return "clcr";
    case Opcode::Cscr: return "cscr";
    case Opcode::CJalr: return "cjalr";
    case Opcode::CRet: return "cret";
    case Opcode::TrapIf: return "trapif";
    case Opcode::GetCompId: return "getcompid";
    case Opcode::SetCompId: return "setcompid";
    case Opcode::CGetAddr: return "cgetaddr";
    case Opcode::CGetBase: return "cgetbase";
    case Opcode::CGetLen: return "cgetlen";
    case Opcode::Yield: return "yield";
    case Opcode::kCount: break;
    }
    return "?";
}

std::string to_string(const Instruction& in)
{
    char buf[64];
    std::snprintf(buf, sizeof buf, "%s rd=%u rs1=%u rs2=%u imm=%d",
                  opcode_name(in.op), in.rd, in.rs1, in.rs2, in.imm);
    return buf;
}

}  // namespace compartos
