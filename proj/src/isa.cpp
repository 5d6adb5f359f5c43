// Copyright (c) cclpol contributors.
// SPDX-License-Identifier: Apache-2.0
#include "cclpol/isa.hpp"

#include <algorithm>

namespace cclpol {

std::uint8_t size_bits_for_width(int width) {
    switch (width) {
    case 1: return op::SZ_B;
    case 2: return op::SZ_H;
    case 4: return op::SZ_W;
    default: return op::SZ_DW;
    }
}

bool is_defined_opcode(std::uint8_t opcode) {
    switch (op::class_of(opcode)) {
    case op::CLS_ALU64:
        switch (op::alu_op(opcode)) {
        case op::ADD: case op::SUB: case op::MUL: case op::DIV: case op::OR: case op::AND:
        case op::LSH: case op::RSH: case op::MOD: case op::XOR: case op::MOV: case op::ARSH:
            return true;
        case op::NEG:
            return !op::uses_reg(opcode);
        default:
            return false;
        }
    case op::CLS_JMP:
        switch (op::jmp_op(opcode)) {
        case op::JA: case op::CALL: case op::EXIT:
            return !op::uses_reg(opcode);
        case op::JEQ: case op::JNE: case op::JGT: case op::JGE: case op::JLT: case op::JLE:
        case op::JSGT: case op::JSGE: case op::JSLT: case op::JSLE:
            return true;
        default:
            return false;
        }
    case op::CLS_LDX:
    case op::CLS_ST:
    case op::CLS_STX:
        return op::mode_bits(opcode) == op::MODE_MEM;
    case op::CLS_LD:
        return opcode == op::LD_MAP;
    default:
        return false;
    }
}

bool is_jump(const Instruction& insn) {
    if (op::class_of(insn.opcode) != op::CLS_JMP) {
        return false;
    }
    const auto code = op::jmp_op(insn.opcode);
    return code != op::CALL && code != op::EXIT;
}

bool is_conditional_jump(const Instruction& insn) {
    return is_jump(insn) && op::jmp_op(insn.opcode) != op::JA;
}

std::string_view to_string(HookKind hook) {
    switch (hook) {
    case HookKind::TUNER: return "tuner";
    case HookKind::PROFILER: return "profiler";
    case HookKind::NET_TX: return "net_tx";
    case HookKind::NET_RX: return "net_rx";
    }
    return "?";
}

std::optional<HookKind> parse_hook(std::string_view text) {
    for (auto h : {HookKind::TUNER, HookKind::PROFILER, HookKind::NET_TX, HookKind::NET_RX}) {
        if (to_string(h) == text) {
            return h;
        }
    }
    return std::nullopt;
}

std::string_view to_string(MapKind kind) { return kind == MapKind::ARRAY ? "array" : "hash"; }

std::string validate(const MapDescriptor& desc) {
    if (desc.name.empty()) {
        return "map name must not be empty";
    }
    if (desc.key_size < 1) {
        return "key_size must be >= 1";
    }
    if (desc.value_size < 1) {
        return "value_size must be >= 1";
    }
    if (desc.max_entries < 1) {
        return "max_entries must be >= 1";
    }
    if (desc.kind == MapKind::ARRAY && desc.key_size != 4) {
        return "array maps require key_size = 4";
    }
    return {};
}

std::size_t count_helper_calls(const Program& prog, std::int32_t helper_id) {
    return static_cast<std::size_t>(std::count_if(prog.instructions.begin(), prog.instructions.end(), [&](const Instruction& i) {
        return i.opcode == (op::CLS_JMP | op::CALL) && i.imm == helper_id;
    }));
}

} // namespace cclpol
