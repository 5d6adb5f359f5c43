// Copyright (c) cclpol contributors.
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

#include "cclpol/isa.hpp"

namespace cclpol {

class ParseError : public std::runtime_error {
  public:
    ParseError(int line, int column, const std::string& message);

    int line() const { return line_; }
    int column() const { return column_; }
    const std::string& message() const { return message_; }

  private:
    int line_;
    int column_;
    std::string message_;
};

// Policy text format (.cclpol), one instruction per line, `;` comments:
//
//   .name record_latency
//   .hook profiler
//   .map latency_map hash key=4 value=16 entries=1024
//       ldxw r2, [r1+0]
//       jeq r0, 0, out
//   out:
//       exit
//
// Jump targets are labels or signed instruction offsets (`+3`, `-2`)
// relative to the next instruction.
Program assemble(std::string_view source);

/// Inverse of assemble(); directives equal to their defaults (empty name,
/// tuner hook) are omitted, so a bare {EXIT} program prints as "exit".
std::string disassemble(const Program& program);

/// One instruction in assembly syntax, with numeric jump offsets.
std::string format_instruction(const Instruction& insn, const Program* program = nullptr);

} // namespace cclpol
