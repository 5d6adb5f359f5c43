// Copyright (c) cclpol contributors.
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cclpol/context.hpp"
#include "cclpol/isa.hpp"

namespace cclpol {

enum class RejectionClass : std::uint8_t {
    NULL_DEREF,
    OUT_OF_BOUNDS,
    ILLEGAL_HELPER,
    STACK_OVERFLOW,
    UNBOUNDED_LOOP,
    INPUT_FIELD_WRITE,
    DIV_BY_ZERO,
    MALFORMED,
};

std::string_view to_string(RejectionClass c);
std::optional<RejectionClass> parse_rejection_class(std::string_view text);

struct VerifierConfig {
    std::uint32_t max_stack = 512;
    std::uint64_t max_total_instructions = 1'000'000;
    std::uint32_t max_loop_iterations = 4096;
    // Indexed by HookKind.
    std::array<std::vector<std::int32_t>, 4> allowed_helpers = default_helpers();

    static std::array<std::vector<std::int32_t>, 4> default_helpers();
    const std::vector<std::int32_t>& helpers_for(HookKind hook) const {
        return allowed_helpers[static_cast<std::size_t>(hook)];
    }
};

struct Verdict {
    bool accepted = false;
    std::optional<RejectionClass> rejection_class;
    std::string message;
    // Offending instruction index, -1 when not tied to one instruction.
    int insn = -1;
    // Abstract register state at the fault point.
    std::string registers;
    std::uint64_t analyzed_insns = 0;

    bool operator==(const Verdict&) const = default;
};

/// Abstract interpretation over intervals and value classes. Accepting means
/// every concrete execution stays inside ctx/stack/map-value regions, null
/// checks every lookup result before use, calls only whitelisted helpers with
/// well-typed arguments, terminates, never writes read-only context bytes,
/// never divides by a possibly-zero value and never reads an uninitialized
/// register.
Verdict verify(const Program& program, const VerifierConfig& config, const ContextLayout& layout);

inline Verdict verify(const Program& program, const VerifierConfig& config = {}) {
    return verify(program, config, layout_for(program.hook));
}

/// "VERIFIER REJECT: <detail> at insn <k>" followed by class and register state.
std::string explain(const Verdict& verdict);

} // namespace cclpol
