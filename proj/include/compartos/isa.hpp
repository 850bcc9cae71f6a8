#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>

namespace compartos {

// 8-byte instruction words, little-endian:
//   opcode(1) rd(1) rs1(1) rs2(1) imm(4, signed)
inline constexpr unsigned kInstrSize = 8;

enum class Opcode : uint8_t {
    Halt = 0,  // zeroed memory executes as HALT
    Li,
    Add,
    Sub,
    Beq,
    Bne,
    CMove,
    CIncOffset,     // cursor += imm
    CIncOffsetReg,  // cursor += x[rs2]
    CSetBounds,     // bounds := [cursor, cursor + x[rs2])
    CAndPerm,       // perms &= imm
    CSealEntry,
    Clc,   // rd := cap at c[rs1].cursor + imm*16; traps on a cleared granule tag
    Clw,   // x[rd] := word at c[rs1].cursor + imm
    Csw,   // word at c[rs1].cursor + imm := x[rd]
    Clcr,  // rd := cap at c[rs1].cursor + imm; cleared tag loads untagged
    Cscr,  // cap at c[rs1].cursor + imm := c[rd]
    CJalr,
    CRet,
    TrapIf,  // traps if x[rs1] != 0 (synthetic scenarios)
    GetCompId,
    SetCompId,
    CGetAddr,
    CGetBase,
    CGetLen,
    Yield,
    kCount,
};

// Capability register file indices as used in instruction fields.
enum CapReg : uint8_t {
    // 0..7 are c0..c7
    CREG_CGP = 8,
    CREG_CSP = 9,
    CREG_CRA = 10,
    CREG_PCC = 11,  // readable via CMOVE, never a destination
    CREG_CTX = 12,  // per-task trusted context stack
    kNumCapRegs = 13,
};

struct Instruction {
    Opcode op = Opcode::Halt;
    uint8_t rd = 0;
    uint8_t rs1 = 0;
    uint8_t rs2 = 0;
    int32_t imm = 0;

    bool operator==(const Instruction&) const = default;
};

std::array<uint8_t, kInstrSize> encode_instruction(const Instruction& in);
std::optional<Instruction> decode_instruction(std::span<const uint8_t> bytes);

const char* opcode_name(Opcode op);
std::string to_string(const Instruction& in);

}  // namespace compartos
