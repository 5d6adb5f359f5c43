// Copyright (c) cclpol contributors.
// SPDX-License-Identifier: Apache-2.0
#include "cclpol/vm.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <random>

namespace cclpol {

SafetyFault::SafetyFault(int pc, const std::string& what)
    : std::runtime_error("safety fault at insn " + std::to_string(pc) + ": " + what), pc_(pc) {}

void TraceRing::push(std::int64_t value) {
    auto idx = head_.fetch_add(1, std::memory_order_relaxed);
    slots_[idx % CAPACITY].store(value, std::memory_order_relaxed);
}

std::vector<std::int64_t> TraceRing::snapshot() const {
    const auto head = head_.load(std::memory_order_acquire);
    const auto n = std::min<std::uint64_t>(head, CAPACITY);
    std::vector<std::int64_t> out;
    out.reserve(n);
    for (auto i = head - n; i < head; ++i) out.push_back(slots_[i % CAPACITY].load(std::memory_order_relaxed));
    return out;
}

std::shared_ptr<const PreparedProgram> prepare(const Program& program, MapRegistry& registry, std::uint32_t max_stack) {
    auto p = std::make_shared<PreparedProgram>();
    p->program = program;
    p->layout = layout_for(program.hook);
    p->maps = registry.bind(program);
    p->max_stack = max_stack;
    p->n_lookup = count_helper_calls(program, helper::MAP_LOOKUP);
    p->n_update = count_helper_calls(program, helper::MAP_UPDATE);
    return p;
}

namespace {

constexpr std::size_t STACK_WORDS_MAX = 4096 / 8;

[[noreturn]] void engine_bug(int pc, const char* what) {
    std::fprintf(stderr, "cclpol: engine bug at insn %d: %s (verifier accepted an unsafe program)\n", pc, what);
    std::abort();
}

// Aligned accesses go through atomic_ref so that concurrent in-place map value
// writes are word atomic; unaligned ones fall back to memcpy.
template <typename T>
T load_mem(const std::uint8_t* p) {
    if (reinterpret_cast<std::uintptr_t>(p) % alignof(T) == 0) {
        return std::atomic_ref<T>(*reinterpret_cast<T*>(const_cast<std::uint8_t*>(p))).load(std::memory_order_relaxed);
    }
    T v;
    std::memcpy(&v, p, sizeof(T));
    return v;
}

template <typename T>
void store_mem(std::uint8_t* p, T v) {
    if (reinterpret_cast<std::uintptr_t>(p) % alignof(T) == 0) {
        std::atomic_ref<T>(*reinterpret_cast<T*>(p)).store(v, std::memory_order_relaxed);
        return;
    }
    std::memcpy(p, &v, sizeof(T));
}

std::uint64_t load_width(const std::uint8_t* p, int width) {
    switch (width) {
    case 1: return load_mem<std::uint8_t>(p);
    case 2: return load_mem<std::uint16_t>(p);
    case 4: return load_mem<std::uint32_t>(p);
    default: return load_mem<std::uint64_t>(p);
    }
}

void store_width(std::uint8_t* p, int width, std::uint64_t v) {
    switch (width) {
    case 1: store_mem<std::uint8_t>(p, static_cast<std::uint8_t>(v)); break;
    case 2: store_mem<std::uint16_t>(p, static_cast<std::uint16_t>(v)); break;
    case 4: store_mem<std::uint32_t>(p, static_cast<std::uint32_t>(v)); break;
    default: store_mem<std::uint64_t>(p, v); break;
    }
}

bool jump_taken(std::uint8_t code, std::uint64_t a, std::uint64_t b) {
    const auto sa = static_cast<std::int64_t>(a);
    const auto sb = static_cast<std::int64_t>(b);
    switch (code) {
    case op::JEQ: return a == b;
    case op::JNE: return a != b;
    case op::JGT: return a > b;
    case op::JGE: return a >= b;
    case op::JLT: return a < b;
    case op::JLE: return a <= b;
    case op::JSGT: return sa > sb;
    case op::JSGE: return sa >= sb;
    case op::JSLT: return sa < sb;
    case op::JSLE: return sa <= sb;
    default: return false;
    }
}

// Runtime shadow state for CHECKED mode.
struct Shadow {
    const PreparedProgram& prog;
    std::uintptr_t ctx_begin;
    std::uintptr_t stack_begin;
    std::uintptr_t stack_end;
    std::uint16_t reg_init = 0;
    std::array<std::uint8_t, STACK_WORDS_MAX * 8> stack_init{};
    std::vector<std::pair<std::uintptr_t, std::uintptr_t>> map_values;

    enum class Kind { CTX, STACK, MAP_VALUE };

    Kind classify(int pc, std::uint64_t addr, int width, bool store) const {
        const auto a = static_cast<std::uintptr_t>(addr);
        const auto e = a + static_cast<std::uintptr_t>(width);
        if (a == 0) throw SafetyFault(pc, "null pointer dereference");
        if (e < a) throw SafetyFault(pc, "address wraps around");
        if (a >= ctx_begin && e <= ctx_begin + prog.layout.size) {
            if (store && !prog.layout.writable(static_cast<std::int64_t>(a - ctx_begin), static_cast<std::int64_t>(e - ctx_begin))) {
                throw SafetyFault(pc, "store to read-only context offset " + std::to_string(a - ctx_begin));
            }
            return Kind::CTX;
        }
        if (a >= stack_begin && e <= stack_end) return Kind::STACK;
        for (const auto& [b, end] : map_values) {
            if (a >= b && e <= end) return Kind::MAP_VALUE;
        }
        throw SafetyFault(pc, "access to unmapped address");
    }

    void check_read(int pc, std::uint64_t addr, int width) const {
        if (classify(pc, addr, width, false) != Kind::STACK) return;
        const auto off = static_cast<std::uintptr_t>(addr) - stack_begin;
        for (int i = 0; i < width; ++i) {
            if (!stack_init[off + i]) throw SafetyFault(pc, "read of uninitialized stack byte");
        }
    }

    void check_write(int pc, std::uint64_t addr, int width) {
        if (classify(pc, addr, width, true) != Kind::STACK) return;
        const auto off = static_cast<std::uintptr_t>(addr) - stack_begin;
        for (int i = 0; i < width; ++i) stack_init[off + i] = 1;
    }

    void require(int pc, std::uint8_t r) const {
        if (!(reg_init & (1u << r))) throw SafetyFault(pc, "read of uninitialized register r" + std::to_string(r));
    }

    MapInstance* map_arg(int pc, std::uint64_t v) const {
        for (const auto& m : prog.maps) {
            if (reinterpret_cast<std::uint64_t>(m.get()) == v) return m.get();
        }
        throw SafetyFault(pc, "helper map argument is not a map handle");
    }
};

template <bool Checked>
std::int64_t run(const PreparedProgram& prog, std::span<std::uint8_t> ctx, const ExecOptions& opts) {
    alignas(8) std::uint64_t stack[STACK_WORDS_MAX];
    std::uint64_t reg[NUM_REGISTERS] = {};
    const std::size_t stack_bytes = std::min<std::size_t>(prog.max_stack, sizeof(stack));
    auto* stack_base = reinterpret_cast<std::uint8_t*>(stack);
    reg[R1] = reinterpret_cast<std::uint64_t>(ctx.data());
    reg[R10_FRAME] = reinterpret_cast<std::uint64_t>(stack_base + stack_bytes);

    struct NoShadow {};
    std::conditional_t<Checked, std::optional<Shadow>, NoShadow> shadow;
    if constexpr (Checked) {
        if (ctx.size() < prog.layout.size) throw SafetyFault(-1, "context buffer smaller than layout");
        shadow.emplace(Shadow{prog, reinterpret_cast<std::uintptr_t>(ctx.data()),
                              reinterpret_cast<std::uintptr_t>(stack_base),
                              reinterpret_cast<std::uintptr_t>(stack_base + stack_bytes), 0, {}, {}});
        shadow->reg_init = (1u << R1) | (1u << R10_FRAME);
    }

    const auto& code = prog.program.instructions;
    const std::size_t n = code.size();
    std::uint64_t executed = 0;
    std::size_t pc = 0;
    for (;;) {
        if constexpr (Checked) {
            if (pc >= n) throw SafetyFault(static_cast<int>(n) - 1, "execution fell off the end");
            if (++executed > opts.insn_budget) throw SafetyFault(static_cast<int>(pc), "instruction budget exhausted");
        }
        const Instruction& insn = code[pc];
        const int ipc = static_cast<int>(pc);
        const auto cls = op::class_of(insn.opcode);
        const auto imm = static_cast<std::uint64_t>(static_cast<std::int64_t>(insn.imm));
        ++pc;
        switch (cls) {
        case op::CLS_ALU64: {
            const auto aop = op::alu_op(insn.opcode);
            std::uint64_t src = imm;
            if (op::uses_reg(insn.opcode) && aop != op::NEG) {
                if constexpr (Checked) shadow->require(ipc, insn.src);
                src = reg[insn.src];
            }
            if constexpr (Checked) {
                if (aop != op::MOV) shadow->require(ipc, insn.dst);
                if (insn.dst == R10_FRAME) throw SafetyFault(ipc, "write to frame pointer");
            }
            std::uint64_t& d = reg[insn.dst];
            switch (aop) {
            case op::MOV: d = src; break;
            case op::ADD: d += src; break;
            case op::SUB: d -= src; break;
            case op::MUL: d *= src; break;
            case op::DIV:
                if (src == 0) {
                    if constexpr (Checked) throw SafetyFault(ipc, "division by zero");
                    else engine_bug(ipc, "division by zero");
                }
                d /= src;
                break;
            case op::MOD:
                if (src == 0) {
                    if constexpr (Checked) throw SafetyFault(ipc, "modulo by zero");
                    else engine_bug(ipc, "modulo by zero");
                }
                d %= src;
                break;
            case op::OR: d |= src; break;
            case op::AND: d &= src; break;
            case op::XOR: d ^= src; break;
            case op::LSH: d <<= (src & 63); break;
            case op::RSH: d >>= (src & 63); break;
            case op::ARSH: d = static_cast<std::uint64_t>(static_cast<std::int64_t>(d) >> (src & 63)); break;
            case op::NEG: d = 0 - d; break;
            default:
                if constexpr (Checked) throw SafetyFault(ipc, "unknown ALU operation");
                else engine_bug(ipc, "unknown ALU operation");
            }
            if constexpr (Checked) shadow->reg_init |= static_cast<std::uint16_t>(1u << insn.dst);
            break;
        }
        case op::CLS_LD: {
            const auto slot = static_cast<std::size_t>(insn.imm);
            if constexpr (Checked) {
                if (insn.src != op::PSEUDO_MAP || slot >= prog.maps.size()) throw SafetyFault(ipc, "bad map slot");
                if (insn.dst == R10_FRAME) throw SafetyFault(ipc, "write to frame pointer");
                shadow->reg_init |= static_cast<std::uint16_t>(1u << insn.dst);
            }
            reg[insn.dst] = reinterpret_cast<std::uint64_t>(prog.maps[slot].get());
            break;
        }
        case op::CLS_LDX: {
            const int w = access_width(insn.opcode);
            if constexpr (Checked) {
                shadow->require(ipc, insn.src);
                if (insn.dst == R10_FRAME) throw SafetyFault(ipc, "write to frame pointer");
            }
            const std::uint64_t addr = reg[insn.src] + static_cast<std::uint64_t>(static_cast<std::int64_t>(insn.offset));
            if constexpr (Checked) {
                shadow->check_read(ipc, addr, w);
                shadow->reg_init |= static_cast<std::uint16_t>(1u << insn.dst);
            }
            reg[insn.dst] = load_width(reinterpret_cast<const std::uint8_t*>(addr), w);
            break;
        }
        case op::CLS_ST:
        case op::CLS_STX: {
            const int w = access_width(insn.opcode);
            std::uint64_t value = imm;
            if (cls == op::CLS_STX) {
                if constexpr (Checked) shadow->require(ipc, insn.src);
                value = reg[insn.src];
            }
            if constexpr (Checked) shadow->require(ipc, insn.dst);
            const std::uint64_t addr = reg[insn.dst] + static_cast<std::uint64_t>(static_cast<std::int64_t>(insn.offset));
            if constexpr (Checked) shadow->check_write(ipc, addr, w);
            store_width(reinterpret_cast<std::uint8_t*>(addr), w, value);
            break;
        }
        case op::CLS_JMP: {
            const auto jop = op::jmp_op(insn.opcode);
            if (jop == op::EXIT) {
                if constexpr (Checked) shadow->require(ipc, R0);
                return static_cast<std::int64_t>(reg[R0]);
            }
            if (jop == op::CALL) {
                std::uint64_t ret = 0;
                if constexpr (Checked) {
                    if (!helper_allowed(prog.program.hook, insn.imm)) {
                        throw SafetyFault(ipc, "helper " + std::to_string(insn.imm) + " not whitelisted");
                    }
                }
                switch (insn.imm) {
                case helper::MAP_LOOKUP: {
                    MapInstance* m;
                    if constexpr (Checked) {
                        shadow->require(ipc, 1);
                        shadow->require(ipc, 2);
                        m = shadow->map_arg(ipc, reg[1]);
                        shadow->check_read(ipc, reg[2], static_cast<int>(m->descriptor().key_size));
                    } else {
                        m = reinterpret_cast<MapInstance*>(reg[1]);
                    }
                    auto* v = m->lookup_ref(reinterpret_cast<const std::uint8_t*>(reg[2]));
                    if constexpr (Checked) {
                        if (v) {
                            auto b = reinterpret_cast<std::uintptr_t>(v);
                            shadow->map_values.emplace_back(b, b + m->descriptor().value_size);
                        }
                    }
                    ret = reinterpret_cast<std::uint64_t>(v);
                    break;
                }
                case helper::MAP_UPDATE: {
                    MapInstance* m;
                    if constexpr (Checked) {
                        for (std::uint8_t r = 1; r <= 4; ++r) shadow->require(ipc, r);
                        m = shadow->map_arg(ipc, reg[1]);
                        shadow->check_read(ipc, reg[2], static_cast<int>(m->descriptor().key_size));
                        shadow->check_read(ipc, reg[3], static_cast<int>(m->descriptor().value_size));
                    } else {
                        m = reinterpret_cast<MapInstance*>(reg[1]);
                    }
                    const auto& d = m->descriptor();
                    auto st = m->update({reinterpret_cast<const std::uint8_t*>(reg[2]), d.key_size},
                                        {reinterpret_cast<const std::uint8_t*>(reg[3]), d.value_size});
                    ret = static_cast<std::uint64_t>(helper_code(st));
                    break;
                }
                case helper::MAP_DELETE: {
                    MapInstance* m;
                    if constexpr (Checked) {
                        shadow->require(ipc, 1);
                        shadow->require(ipc, 2);
                        m = shadow->map_arg(ipc, reg[1]);
                        shadow->check_read(ipc, reg[2], static_cast<int>(m->descriptor().key_size));
                    } else {
                        m = reinterpret_cast<MapInstance*>(reg[1]);
                    }
                    auto st = m->remove({reinterpret_cast<const std::uint8_t*>(reg[2]), m->descriptor().key_size});
                    ret = static_cast<std::uint64_t>(helper_code(st));
                    break;
                }
                case helper::TRACE_LOG:
                    if constexpr (Checked) shadow->require(ipc, 1);
                    if (opts.trace) opts.trace->push(static_cast<std::int64_t>(reg[1]));
                    ret = 0;
                    break;
                default:
                    if constexpr (Checked) throw SafetyFault(ipc, "unknown helper " + std::to_string(insn.imm));
                    else engine_bug(ipc, "unknown helper");
                }
                reg[R0] = ret;
                if constexpr (Checked) {
                    shadow->reg_init = static_cast<std::uint16_t>((shadow->reg_init & ~0x3Eu) | 1u);
                }
                break;
            }
            bool taken = true;
            if (jop != op::JA) {
                std::uint64_t rhs = imm;
                if constexpr (Checked) shadow->require(ipc, insn.dst);
                if (op::uses_reg(insn.opcode)) {
                    if constexpr (Checked) shadow->require(ipc, insn.src);
                    rhs = reg[insn.src];
                }
                taken = jump_taken(jop, reg[insn.dst], rhs);
            }
            if (taken) {
                const auto target = static_cast<std::int64_t>(pc) + insn.offset;
                if constexpr (Checked) {
                    if (target < 0 || static_cast<std::size_t>(target) >= n) throw SafetyFault(ipc, "jump out of range");
                }
                pc = static_cast<std::size_t>(target);
            }
            break;
        }
        default:
            if constexpr (Checked) throw SafetyFault(ipc, "unknown instruction class");
            else engine_bug(ipc, "unknown instruction class");
        }
    }
}

// Helper dispatch for the FAST loop, kept out of line so the loop stays small.
std::uint64_t call_helper_fast(std::int32_t id, const std::uint64_t* reg, const ExecOptions& opts, int pc) {
    switch (id) {
    case helper::MAP_LOOKUP: {
        auto* m = reinterpret_cast<MapInstance*>(reg[1]);
        return reinterpret_cast<std::uint64_t>(m->lookup_ref(reinterpret_cast<const std::uint8_t*>(reg[2])));
    }
    case helper::MAP_UPDATE: {
        auto* m = reinterpret_cast<MapInstance*>(reg[1]);
        const auto& d = m->descriptor();
        return static_cast<std::uint64_t>(helper_code(m->update({reinterpret_cast<const std::uint8_t*>(reg[2]), d.key_size},
                                                                {reinterpret_cast<const std::uint8_t*>(reg[3]), d.value_size})));
    }
    case helper::MAP_DELETE: {
        auto* m = reinterpret_cast<MapInstance*>(reg[1]);
        return static_cast<std::uint64_t>(
            helper_code(m->remove({reinterpret_cast<const std::uint8_t*>(reg[2]), m->descriptor().key_size})));
    }
    case helper::TRACE_LOG:
        if (opts.trace) opts.trace->push(static_cast<std::int64_t>(reg[1]));
        return 0;
    default: engine_bug(pc, "unknown helper");
    }
}

// Verified programs only: one flat switch on the full opcode byte.
std::int64_t run_fast(const PreparedProgram& prog, std::span<std::uint8_t> ctx, const ExecOptions& opts) {
    alignas(8) std::uint64_t stack[STACK_WORDS_MAX];
    std::uint64_t reg[NUM_REGISTERS] = {};
    const std::size_t stack_bytes = std::min<std::size_t>(prog.max_stack, sizeof(stack));
    reg[R1] = reinterpret_cast<std::uint64_t>(ctx.data());
    reg[R10_FRAME] = reinterpret_cast<std::uint64_t>(reinterpret_cast<std::uint8_t*>(stack) + stack_bytes);

    const Instruction* code = prog.program.instructions.data();
    const Instruction* insn = code;
    for (;; ++insn) {
        auto& d = reg[insn->dst];
        const std::uint64_t k = static_cast<std::uint64_t>(static_cast<std::int64_t>(insn->imm));
        const std::uint64_t x = reg[insn->src];
        const auto addr_src = x + static_cast<std::uint64_t>(static_cast<std::int64_t>(insn->offset));
        const auto addr_dst = d + static_cast<std::uint64_t>(static_cast<std::int64_t>(insn->offset));
        switch (insn->opcode) {
#define CCLPOL_ALU(OP, EXPR_K, EXPR_X)                                                                                 \
    case op::CLS_ALU64 | op::OP | op::SRC_IMM: EXPR_K; break;                                                          \
    case op::CLS_ALU64 | op::OP | op::SRC_REG: EXPR_X; break;
            CCLPOL_ALU(MOV, d = k, d = x)
            CCLPOL_ALU(ADD, d += k, d += x)
            CCLPOL_ALU(SUB, d -= k, d -= x)
            CCLPOL_ALU(MUL, d *= k, d *= x)
            CCLPOL_ALU(OR, d |= k, d |= x)
            CCLPOL_ALU(AND, d &= k, d &= x)
            CCLPOL_ALU(XOR, d ^= k, d ^= x)
            CCLPOL_ALU(LSH, d <<= (k & 63), d <<= (x & 63))
            CCLPOL_ALU(RSH, d >>= (k & 63), d >>= (x & 63))
            CCLPOL_ALU(ARSH, d = static_cast<std::uint64_t>(static_cast<std::int64_t>(d) >> (k & 63)),
                       d = static_cast<std::uint64_t>(static_cast<std::int64_t>(d) >> (x & 63)))
            CCLPOL_ALU(DIV, if (k == 0) engine_bug(static_cast<int>(insn - code), "division by zero"); d /= k,
                       if (x == 0) engine_bug(static_cast<int>(insn - code), "division by zero"); d /= x)
            CCLPOL_ALU(MOD, if (k == 0) engine_bug(static_cast<int>(insn - code), "modulo by zero"); d %= k,
                       if (x == 0) engine_bug(static_cast<int>(insn - code), "modulo by zero"); d %= x)
#undef CCLPOL_ALU
        case op::CLS_ALU64 | op::NEG: d = 0 - d; break;
        case op::CLS_ALU64 | op::NEG | op::SRC_REG: d = 0 - d; break;

        case op::LD_MAP: d = reinterpret_cast<std::uint64_t>(prog.maps[static_cast<std::size_t>(insn->imm)].get()); break;

#define CCLPOL_MEM(SZ, T)                                                                                              \
    case op::CLS_LDX | op::MODE_MEM | op::SZ: {                                                                        \
        T v;                                                                                                           \
        std::memcpy(&v, reinterpret_cast<const void*>(addr_src), sizeof v);                                            \
        d = v;                                                                                                         \
        break;                                                                                                         \
    }                                                                                                                  \
    case op::CLS_ST | op::MODE_MEM | op::SZ: {                                                                         \
        const auto v = static_cast<T>(k);                                                                              \
        std::memcpy(reinterpret_cast<void*>(addr_dst), &v, sizeof v);                                                  \
        break;                                                                                                         \
    }                                                                                                                  \
    case op::CLS_STX | op::MODE_MEM | op::SZ: {                                                                        \
        const auto v = static_cast<T>(x);                                                                              \
        std::memcpy(reinterpret_cast<void*>(addr_dst), &v, sizeof v);                                                  \
        break;                                                                                                         \
    }
            CCLPOL_MEM(SZ_B, std::uint8_t)
            CCLPOL_MEM(SZ_H, std::uint16_t)
            CCLPOL_MEM(SZ_W, std::uint32_t)
            CCLPOL_MEM(SZ_DW, std::uint64_t)
#undef CCLPOL_MEM

        case op::CLS_JMP | op::JA: insn += insn->offset; break;
#define CCLPOL_JMP(OP, T, CMP)                                                                                         \
    case op::CLS_JMP | op::OP | op::SRC_IMM:                                                                           \
        if (static_cast<T>(d) CMP static_cast<T>(k)) insn += insn->offset;                                             \
        break;                                                                                                         \
    case op::CLS_JMP | op::OP | op::SRC_REG:                                                                           \
        if (static_cast<T>(d) CMP static_cast<T>(x)) insn += insn->offset;                                             \
        break;
            CCLPOL_JMP(JEQ, std::uint64_t, ==)
            CCLPOL_JMP(JNE, std::uint64_t, !=)
            CCLPOL_JMP(JGT, std::uint64_t, >)
            CCLPOL_JMP(JGE, std::uint64_t, >=)
            CCLPOL_JMP(JLT, std::uint64_t, <)
            CCLPOL_JMP(JLE, std::uint64_t, <=)
            CCLPOL_JMP(JSGT, std::int64_t, >)
            CCLPOL_JMP(JSGE, std::int64_t, >=)
            CCLPOL_JMP(JSLT, std::int64_t, <)
            CCLPOL_JMP(JSLE, std::int64_t, <=)
#undef CCLPOL_JMP
        case op::CLS_JMP | op::CALL: reg[R0] = call_helper_fast(insn->imm, reg, opts, static_cast<int>(insn - code)); break;
        case op::CLS_JMP | op::EXIT: return static_cast<std::int64_t>(reg[R0]);
        default: engine_bug(static_cast<int>(insn - code), "undefined opcode");
        }
    }
}

} // namespace

std::int64_t execute(const PreparedProgram& prog, std::span<std::uint8_t> ctx, const ExecOptions& opts) {
    if (opts.mode == ExecMode::CHECKED) return run<true>(prog, ctx, opts);
    return run_fast(prog, ctx, opts);
}

namespace {

// Context values drawn from a mix of boundary cases and plausible host values.
std::uint64_t interesting_value(std::mt19937_64& rng, int width) {
    static constexpr std::uint64_t edges[] = {0, 1, 2, 3, 4, 7, 8, 16, 32, 33, 0x7fff, 0x8000, 32768, 32769,
                                              1u << 20, 4u << 20, 8u << 20, 128u << 20, 192u << 20, 256u << 20,
                                              0xffffffffu, 0x7fffffffu, 0xffffffffffffffffull, 0x8000000000000000ull};
    std::uint64_t v;
    switch (rng() % 4) {
    case 0: v = edges[rng() % std::size(edges)]; break;
    case 1: v = rng() % 64; break;
    case 2: v = std::uint64_t{1} << (rng() % 64); break;
    default: v = rng(); break;
    }
    if (width < 8) v &= (std::uint64_t{1} << (8 * width)) - 1;
    return v;
}

void fill_context(std::mt19937_64& rng, std::span<std::uint8_t> ctx, HookKind hook) {
    for (std::size_t off = 0; off + 4 <= ctx.size(); off += 4) {
        auto v = static_cast<std::uint32_t>(interesting_value(rng, 4));
        std::memcpy(ctx.data() + off, &v, 4);
    }
    for (std::size_t off = 8; off + 8 <= ctx.size(); off += 8) {
        if (rng() % 2) {
            auto v = interesting_value(rng, 8);
            std::memcpy(ctx.data() + off, &v, 8);
        }
    }
    if (hook == HookKind::TUNER && rng() % 2) {
        // The host's usual starting point: outputs unset.
        std::uint32_t unset = UNSET, zero = 0;
        std::memcpy(ctx.data() + tuner_ctx::ALGORITHM, &unset, 4);
        std::memcpy(ctx.data() + tuner_ctx::PROTOCOL, &unset, 4);
        std::memcpy(ctx.data() + tuner_ctx::N_CHANNELS, &zero, 4);
    }
}

void fill_maps(std::mt19937_64& rng, const PreparedProgram& prog, std::span<const std::uint8_t> ctx) {
    for (const auto& m : prog.maps) {
        const auto& d = m->descriptor();
        std::vector<std::uint8_t> value(d.value_size);
        auto randomize_value = [&] {
            for (std::size_t i = 0; i + 8 <= value.size(); i += 8) {
                auto v = interesting_value(rng, 8);
                std::memcpy(value.data() + i, &v, 8);
            }
            for (std::size_t i = value.size() / 8 * 8; i < value.size(); ++i) value[i] = static_cast<std::uint8_t>(rng());
        };
        if (d.kind == MapKind::ARRAY) {
            const std::uint32_t n = std::min<std::uint32_t>(d.max_entries, 64);
            for (std::uint32_t i = 0; i < n; ++i) {
                if (rng() % 2) continue;
                randomize_value();
                m->update({reinterpret_cast<const std::uint8_t*>(&i), 4}, value);
            }
            continue;
        }
        // Hash keys: candidates lifted from the context so lookups can hit.
        std::vector<std::uint8_t> key(d.key_size);
        const std::size_t inserts = rng() % 4;
        for (std::size_t i = 0; i < inserts; ++i) {
            std::fill(key.begin(), key.end(), 0);
            if (rng() % 4 != 0 && ctx.size() >= 4) {
                const std::size_t off = (rng() % (ctx.size() / 4)) * 4;
                std::memcpy(key.data(), ctx.data() + off, std::min<std::size_t>(4, key.size()));
            } else {
                for (auto& b : key) b = static_cast<std::uint8_t>(rng());
            }
            randomize_value();
            m->update(key, value);
        }
    }
}

std::uint64_t trial_seed(std::uint64_t seed, std::uint64_t trial) {
    // splitmix64 finalizer over the pair.
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (trial + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

} // namespace

std::string run_fuzz_trial(const Program& program, std::uint64_t seed, std::uint64_t trial) {
    std::mt19937_64 rng(trial_seed(seed, trial));
    MapRegistry registry;
    auto prog = prepare(program, registry);
    ContextBuffer ctx;
    ctx.size = prog->layout.size;
    fill_context(rng, ctx.span(), program.hook);
    fill_maps(rng, *prog, ctx.span());
    TraceRing trace;
    ExecOptions opts{ExecMode::CHECKED, &trace, 1'000'000};
    try {
        // Two runs so the second sees map state left by the first.
        execute(*prog, ctx.span(), opts);
        execute(*prog, ctx.span(), opts);
    } catch (const SafetyFault& f) {
        return f.what();
    }
    return {};
}

FuzzResult execute_checked_fuzz(const Program& program, std::uint64_t trials, std::uint64_t seed) {
    FuzzResult r;
    r.trials = trials;
    for (std::uint64_t t = 0; t < trials; ++t) {
        auto fault = run_fuzz_trial(program, seed, t);
        if (fault.empty()) continue;
        if (r.faults++ == 0) r.first_fault = "trial " + std::to_string(t) + ": " + fault;
    }
    return r;
}

FuzzResult execute_checked_fuzz_parallel(const Program& program, std::uint64_t trials, std::uint64_t seed) {
    FuzzResult r;
    r.trials = trials;
    std::uint64_t faults = 0;
    std::uint64_t first = trials;
    const auto n = static_cast<std::int64_t>(trials);
#pragma omp parallel for schedule(dynamic, 64) reduction(+ : faults) reduction(min : first)
    for (std::int64_t t = 0; t < n; ++t) {
        if (!run_fuzz_trial(program, seed, static_cast<std::uint64_t>(t)).empty()) {
            ++faults;
            first = std::min(first, static_cast<std::uint64_t>(t));
        }
    }
    r.faults = faults;
    if (faults > 0) r.first_fault = "trial " + std::to_string(first) + ": " + run_fuzz_trial(program, seed, first);
    return r;
}

} // namespace cclpol
