// Copyright (c) cclpol contributors.
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace cclpol {

// Opcode byte layout follows classic eBPF: low 3 bits are the class, the rest
// encode operation/source (ALU, JMP) or size/mode (memory).
namespace op {
constexpr std::uint8_t CLS_LD = 0x00;
constexpr std::uint8_t CLS_LDX = 0x01;
constexpr std::uint8_t CLS_ST = 0x02;
constexpr std::uint8_t CLS_STX = 0x03;
constexpr std::uint8_t CLS_JMP = 0x05;
constexpr std::uint8_t CLS_ALU64 = 0x07;

constexpr std::uint8_t SRC_IMM = 0x00;
constexpr std::uint8_t SRC_REG = 0x08;

constexpr std::uint8_t ADD = 0x00;
constexpr std::uint8_t SUB = 0x10;
constexpr std::uint8_t MUL = 0x20;
constexpr std::uint8_t DIV = 0x30;
constexpr std::uint8_t OR = 0x40;
constexpr std::uint8_t AND = 0x50;
constexpr std::uint8_t LSH = 0x60;
constexpr std::uint8_t RSH = 0x70;
constexpr std::uint8_t NEG = 0x80;
constexpr std::uint8_t MOD = 0x90;
constexpr std::uint8_t XOR = 0xa0;
constexpr std::uint8_t MOV = 0xb0;
constexpr std::uint8_t ARSH = 0xc0;

constexpr std::uint8_t JA = 0x00;
constexpr std::uint8_t JEQ = 0x10;
constexpr std::uint8_t JGT = 0x20;
constexpr std::uint8_t JGE = 0x30;
constexpr std::uint8_t JNE = 0x50;
constexpr std::uint8_t JSGT = 0x60;
constexpr std::uint8_t JSGE = 0x70;
constexpr std::uint8_t CALL = 0x80;
constexpr std::uint8_t EXIT = 0x90;
constexpr std::uint8_t JLT = 0xa0;
constexpr std::uint8_t JLE = 0xb0;
constexpr std::uint8_t JSLT = 0xc0;
constexpr std::uint8_t JSLE = 0xd0;

constexpr std::uint8_t SZ_W = 0x00;
constexpr std::uint8_t SZ_H = 0x08;
constexpr std::uint8_t SZ_B = 0x10;
constexpr std::uint8_t SZ_DW = 0x18;
constexpr std::uint8_t MODE_IMM = 0x00;
constexpr std::uint8_t MODE_MEM = 0x60;

// Single-slot map handle load; src register field carries the pseudo marker.
constexpr std::uint8_t LD_MAP = CLS_LD | MODE_IMM | SZ_DW;
constexpr std::uint8_t PSEUDO_MAP = 1;

constexpr std::uint8_t class_of(std::uint8_t opcode) { return opcode & 0x07; }
constexpr std::uint8_t alu_op(std::uint8_t opcode) { return opcode & 0xf0; }
constexpr std::uint8_t jmp_op(std::uint8_t opcode) { return opcode & 0xf0; }
constexpr bool uses_reg(std::uint8_t opcode) { return (opcode & SRC_REG) != 0; }
constexpr std::uint8_t size_bits(std::uint8_t opcode) { return opcode & 0x18; }
constexpr std::uint8_t mode_bits(std::uint8_t opcode) { return opcode & 0xe0; }
} // namespace op

constexpr int NUM_REGISTERS = 11;
constexpr std::uint8_t R0 = 0;
constexpr std::uint8_t R1 = 1;
constexpr std::uint8_t R10_FRAME = 10;
constexpr std::size_t MAX_PROGRAM_INSNS = 65536;

struct Instruction {
    std::uint8_t opcode{};
    std::uint8_t dst{};
    std::uint8_t src{};
    std::int16_t offset{};
    std::int32_t imm{};

    bool operator==(const Instruction&) const = default;
};

/// Access width in bytes for a memory opcode (1, 2, 4 or 8).
constexpr int access_width(std::uint8_t opcode) {
    switch (op::size_bits(opcode)) {
    case op::SZ_B: return 1;
    case op::SZ_H: return 2;
    case op::SZ_W: return 4;
    default: return 8;
    }
}
std::uint8_t size_bits_for_width(int width);

/// True when `opcode` is one of the operations this instruction set defines.
bool is_defined_opcode(std::uint8_t opcode);

bool is_jump(const Instruction& insn);          // JA and conditional jumps (not CALL/EXIT)
bool is_conditional_jump(const Instruction& insn);

enum class HookKind : std::uint8_t { TUNER, PROFILER, NET_TX, NET_RX };

std::string_view to_string(HookKind hook);
std::optional<HookKind> parse_hook(std::string_view text);

enum class MapKind : std::uint8_t { ARRAY, HASH };

std::string_view to_string(MapKind kind);

struct MapDescriptor {
    std::string name;
    MapKind kind{MapKind::ARRAY};
    std::uint32_t key_size{4};
    std::uint32_t value_size{8};
    std::uint32_t max_entries{1};

    bool operator==(const MapDescriptor&) const = default;
};

/// Empty string when the descriptor is valid, otherwise the violated rule.
std::string validate(const MapDescriptor& desc);

struct Program {
    std::string name;
    HookKind hook{HookKind::TUNER};
    std::vector<Instruction> instructions;
    // LD_MAP immediates index into this list.
    std::vector<MapDescriptor> maps;

    bool operator==(const Program&) const = default;
};

/// Number of call sites to a given helper id (static count, not dynamic).
std::size_t count_helper_calls(const Program& prog, std::int32_t helper_id);

} // namespace cclpol
