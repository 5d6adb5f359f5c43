// Copyright (c) cclpol contributors.
// SPDX-License-Identifier: Apache-2.0
#include "cclpol/verifier.hpp"

#include <algorithm>
#include <limits>
#include <map>
#include <sstream>
#include <unordered_map>
#include <utility>

#include "cclpol/assembler.hpp"

namespace cclpol {

std::string_view to_string(RejectionClass c) {
    switch (c) {
    case RejectionClass::NULL_DEREF: return "NULL_DEREF";
    case RejectionClass::OUT_OF_BOUNDS: return "OUT_OF_BOUNDS";
    case RejectionClass::ILLEGAL_HELPER: return "ILLEGAL_HELPER";
    case RejectionClass::STACK_OVERFLOW: return "STACK_OVERFLOW";
    case RejectionClass::UNBOUNDED_LOOP: return "UNBOUNDED_LOOP";
    case RejectionClass::INPUT_FIELD_WRITE: return "INPUT_FIELD_WRITE";
    case RejectionClass::DIV_BY_ZERO: return "DIV_BY_ZERO";
    case RejectionClass::MALFORMED: return "MALFORMED";
    }
    return "?";
}

std::optional<RejectionClass> parse_rejection_class(std::string_view text) {
    for (int i = 0; i <= static_cast<int>(RejectionClass::MALFORMED); ++i) {
        auto c = static_cast<RejectionClass>(i);
        if (to_string(c) == text) return c;
    }
    return std::nullopt;
}

std::array<std::vector<std::int32_t>, 4> VerifierConfig::default_helpers() {
    std::array<std::vector<std::int32_t>, 4> out;
    for (auto h : {HookKind::TUNER, HookKind::PROFILER, HookKind::NET_TX, HookKind::NET_RX}) {
        auto wl = helper_whitelist(h);
        out[static_cast<std::size_t>(h)].assign(wl.begin(), wl.end());
    }
    return out;
}

namespace {

constexpr std::int64_t I64_MIN = std::numeric_limits<std::int64_t>::min();
constexpr std::int64_t I64_MAX = std::numeric_limits<std::int64_t>::max();

struct Interval {
    std::int64_t lo = I64_MIN;
    std::int64_t hi = I64_MAX;

    static Interval top() { return {}; }
    static Interval constant(std::int64_t v) { return {v, v}; }
    bool is_const() const { return lo == hi; }
    bool contains(std::int64_t v) const { return lo <= v && v <= hi; }
    bool contains(const Interval& o) const { return lo <= o.lo && o.hi <= hi; }
    bool nonneg() const { return lo >= 0; }
    bool operator==(const Interval&) const = default;
};

Interval from_i128(__int128 lo, __int128 hi) {
    if (lo < I64_MIN || hi > I64_MAX) return Interval::top();
    return {static_cast<std::int64_t>(lo), static_cast<std::int64_t>(hi)};
}

// Zero-extended result range of a `width`-byte load.
Interval load_range(int width) {
    if (width >= 8) return Interval::top();
    return {0, static_cast<std::int64_t>((std::uint64_t{1} << (8 * width)) - 1)};
}

enum class VClass : std::uint8_t { UNINIT, SCALAR, CTX_REF, STACK_REF, MAP_VALUE_REF, MAP_VALUE_OR_NULL, MAP_HANDLE };

struct AbstractValue {
    VClass cls = VClass::UNINIT;
    Interval range;  // SCALAR
    Interval offset; // reference classes
    std::uint32_t region_size = 0;
    int map = -1;
    std::uint32_t id = 0; // MAP_VALUE_OR_NULL correlation

    static AbstractValue scalar(Interval r) {
        AbstractValue v;
        v.cls = VClass::SCALAR;
        v.range = r;
        return v;
    }
    bool is_pointer() const { return cls != VClass::UNINIT && cls != VClass::SCALAR; }
    bool is_region_ref() const {
        return cls == VClass::CTX_REF || cls == VClass::STACK_REF || cls == VClass::MAP_VALUE_REF;
    }
};

struct State {
    std::array<AbstractValue, NUM_REGISTERS> regs;
    std::vector<std::uint8_t> stack_init; // one flag per byte, index 0 = frame offset -max_stack
    std::vector<std::optional<AbstractValue>> spills; // one per 8-byte slot
};

struct Reject {
    RejectionClass cls;
    std::string message;
};

// old ⊒ new, with a consistent renaming of MAP_VALUE_OR_NULL ids.
class Subsumption {
  public:
    bool value(const AbstractValue& o, const AbstractValue& n) {
        if (o.cls == VClass::UNINIT) return true;
        if (o.cls != n.cls) return false;
        switch (o.cls) {
        case VClass::SCALAR: return o.range.contains(n.range);
        case VClass::CTX_REF:
        case VClass::STACK_REF:
        case VClass::MAP_VALUE_REF:
            return o.map == n.map && o.region_size == n.region_size && o.offset.contains(n.offset);
        case VClass::MAP_VALUE_OR_NULL:
            return o.map == n.map && o.region_size == n.region_size && o.offset == n.offset && same_id(o.id, n.id);
        case VClass::MAP_HANDLE: return o.map == n.map;
        default: return false;
        }
    }

  private:
    std::map<std::uint32_t, std::uint32_t> fwd_, rev_;
    bool same_id(std::uint32_t o, std::uint32_t n) {
        auto f = fwd_.find(o);
        auto r = rev_.find(n);
        if (f == fwd_.end() && r == rev_.end()) {
            fwd_[o] = n;
            rev_[n] = o;
            return true;
        }
        return f != fwd_.end() && r != rev_.end() && f->second == n && r->second == o;
    }
};

bool state_subsumes(const State& o, const State& n) {
    Subsumption s;
    for (int r = 0; r < NUM_REGISTERS; ++r) {
        if (!s.value(o.regs[r], n.regs[r])) return false;
    }
    for (std::size_t i = 0; i < o.stack_init.size(); ++i) {
        if (o.stack_init[i] && !n.stack_init[i]) return false;
    }
    for (std::size_t i = 0; i < o.spills.size(); ++i) {
        const auto& os = o.spills[i];
        const auto& ns = n.spills[i];
        if (os) {
            if (ns) {
                if (!s.value(*os, *ns)) return false;
            } else if (!(os->cls == VClass::SCALAR && os->range == Interval::top())) {
                return false;
            }
        } else if (ns && ns->is_pointer()) {
            // Old saw plain bytes here; new would restore a pointer.
            return false;
        }
    }
    return true;
}

bool state_equal(const State& a, const State& b) { return state_subsumes(a, b) && state_subsumes(b, a); }

std::string describe(const AbstractValue& v, const Program& prog) {
    auto map_name = [&](int m) {
        return (m >= 0 && static_cast<std::size_t>(m) < prog.maps.size()) ? prog.maps[static_cast<std::size_t>(m)].name
                                                                          : std::string("?");
    };
    auto iv = [](const Interval& i) {
        if (i.is_const()) return std::to_string(i.lo);
        return "[" + std::to_string(i.lo) + "," + std::to_string(i.hi) + "]";
    };
    switch (v.cls) {
    case VClass::UNINIT: return "uninit";
    case VClass::SCALAR: return v.range == Interval::top() ? std::string("scalar") : "scalar" + iv(v.range);
    case VClass::CTX_REF: return "ctx(off=" + iv(v.offset) + ")";
    case VClass::STACK_REF: return "fp(off=" + iv(v.offset) + ")";
    case VClass::MAP_VALUE_REF:
        return "map_value(" + map_name(v.map) + ",off=" + iv(v.offset) + ",size=" + std::to_string(v.region_size) + ")";
    case VClass::MAP_VALUE_OR_NULL:
        return "map_value_or_null(" + map_name(v.map) + ",size=" + std::to_string(v.region_size) + ")";
    case VClass::MAP_HANDLE: return "map_ptr(" + map_name(v.map) + ")";
    }
    return "?";
}


// Concrete 64-bit ALU semantics, used when both operands are known constants.
std::int64_t eval_const(std::uint8_t code, std::int64_t a, std::int64_t b) {
    const auto ua = static_cast<std::uint64_t>(a);
    const auto ub = static_cast<std::uint64_t>(b);
    switch (code) {
    case op::ADD: return static_cast<std::int64_t>(ua + ub);
    case op::SUB: return static_cast<std::int64_t>(ua - ub);
    case op::MUL: return static_cast<std::int64_t>(ua * ub);
    case op::DIV: return static_cast<std::int64_t>(ua / ub);
    case op::MOD: return static_cast<std::int64_t>(ua % ub);
    case op::OR: return a | b;
    case op::AND: return a & b;
    case op::XOR: return a ^ b;
    case op::LSH: return static_cast<std::int64_t>(ua << (ub & 63));
    case op::RSH: return static_cast<std::int64_t>(ua >> (ub & 63));
    case op::ARSH: return a >> (ub & 63);
    case op::MOV: return b;
    case op::NEG: return static_cast<std::int64_t>(0 - ua);
    default: return 0;
    }
}

std::int64_t mask_up_to(std::int64_t v) {
    // Smallest 2^k - 1 >= v for v >= 0.
    std::uint64_t m = static_cast<std::uint64_t>(v);
    m |= m >> 1;
    m |= m >> 2;
    m |= m >> 4;
    m |= m >> 8;
    m |= m >> 16;
    m |= m >> 32;
    return static_cast<std::int64_t>(m);
}

Interval scalar_alu(std::uint8_t code, const Interval& a, const Interval& b) {
    if (a.is_const() && b.is_const()) {
        return Interval::constant(eval_const(code, a.lo, b.lo));
    }
    using I = __int128;
    switch (code) {
    case op::MOV: return b;
    case op::ADD: return from_i128(I(a.lo) + b.lo, I(a.hi) + b.hi);
    case op::SUB: return from_i128(I(a.lo) - b.hi, I(a.hi) - b.lo);
    case op::MUL: {
        I c[4] = {I(a.lo) * b.lo, I(a.lo) * b.hi, I(a.hi) * b.lo, I(a.hi) * b.hi};
        return from_i128(*std::min_element(c, c + 4), *std::max_element(c, c + 4));
    }
    case op::DIV:
        if (a.nonneg() && b.lo >= 1) return {a.lo / b.hi, a.hi / b.lo};
        return Interval::top();
    case op::MOD:
        if (b.lo >= 1) return {0, a.nonneg() ? std::min(a.hi, b.hi - 1) : b.hi - 1};
        if (a.nonneg()) return {0, a.hi};
        return Interval::top();
    case op::AND:
        if (a.nonneg() && b.nonneg()) return {0, std::min(a.hi, b.hi)};
        if (a.nonneg()) return {0, a.hi};
        if (b.nonneg()) return {0, b.hi};
        return Interval::top();
    case op::OR:
        if (a.nonneg() && b.nonneg()) return {std::max(a.lo, b.lo), mask_up_to(std::max(a.hi, b.hi))};
        return Interval::top();
    case op::XOR:
        if (a.nonneg() && b.nonneg()) return {0, mask_up_to(std::max(a.hi, b.hi))};
        return Interval::top();
    case op::LSH:
        if (b.is_const() && a.nonneg()) {
            auto s = static_cast<unsigned>(b.lo & 63);
            if (s < 63 && a.hi <= (I64_MAX >> s)) return {a.lo << s, a.hi << s};
        }
        return Interval::top();
    case op::RSH:
        if (b.is_const()) {
            auto s = static_cast<unsigned>(b.lo & 63);
            if (a.nonneg()) return {a.lo >> s, a.hi >> s};
            if (s >= 1) return {0, static_cast<std::int64_t>(~std::uint64_t{0} >> s)};
            return Interval::top();
        }
        if (a.nonneg()) return {0, a.hi};
        return Interval::top();
    case op::ARSH:
        if (b.is_const()) {
            auto s = static_cast<unsigned>(b.lo & 63);
            return {a.lo >> s, a.hi >> s};
        }
        return {std::min<std::int64_t>(a.lo, 0), std::max<std::int64_t>(a.hi, 0)};
    case op::NEG:
        if (a.lo != I64_MIN) return {-a.hi, -a.lo};
        return Interval::top();
    default: return Interval::top();
    }
}

struct Refined {
    std::optional<std::pair<Interval, Interval>> taken;
    std::optional<std::pair<Interval, Interval>> fall;
};

using Pair = std::optional<std::pair<Interval, Interval>>;

Pair refine_lt(Interval a, Interval b) { // a < b
    if (b.hi == I64_MIN || a.lo == I64_MAX) return std::nullopt;
    a.hi = std::min(a.hi, b.hi - 1);
    b.lo = std::max(b.lo, a.lo + 1);
    if (a.lo > a.hi || b.lo > b.hi) return std::nullopt;
    return std::pair{a, b};
}

Pair refine_le(Interval a, Interval b) { // a <= b
    a.hi = std::min(a.hi, b.hi);
    b.lo = std::max(b.lo, a.lo);
    if (a.lo > a.hi || b.lo > b.hi) return std::nullopt;
    return std::pair{a, b};
}

Pair swap_pair(Pair p) {
    if (!p) return p;
    return std::pair{p->second, p->first};
}

Pair refine_eq(Interval a, Interval b) {
    Interval i{std::max(a.lo, b.lo), std::min(a.hi, b.hi)};
    if (i.lo > i.hi) return std::nullopt;
    return std::pair{i, i};
}

Interval exclude(Interval a, std::int64_t v) {
    if (a.lo == v && a.lo < a.hi) ++a.lo;
    else if (a.hi == v && a.lo < a.hi) --a.hi;
    return a;
}

Pair refine_ne(Interval a, Interval b) {
    if (a.is_const() && b.is_const() && a.lo == b.lo) return std::nullopt;
    if (b.is_const()) a = exclude(a, b.lo);
    if (a.is_const()) b = exclude(b, a.lo);
    return std::pair{a, b};
}

bool unsigned_lt(std::int64_t a, std::int64_t b) {
    return static_cast<std::uint64_t>(a) < static_cast<std::uint64_t>(b);
}

// Range refinement for both edges of a conditional jump on scalars.
Refined refine(std::uint8_t code, Interval a, Interval b) {
    auto both = [&] { return Refined{std::pair{a, b}, std::pair{a, b}}; };
    switch (code) {
    case op::JEQ: return {refine_eq(a, b), refine_ne(a, b)};
    case op::JNE: return {refine_ne(a, b), refine_eq(a, b)};
    case op::JSGT: return {swap_pair(refine_lt(b, a)), refine_le(a, b)};
    case op::JSGE: return {swap_pair(refine_le(b, a)), refine_lt(a, b)};
    case op::JSLT: return {refine_lt(a, b), swap_pair(refine_le(b, a))};
    case op::JSLE: return {refine_le(a, b), swap_pair(refine_lt(b, a))};
    default: break;
    }
    // Unsigned comparisons agree with signed ones on non-negative ranges.
    if (a.nonneg() && b.nonneg()) {
        switch (code) {
        case op::JGT: return refine(op::JSGT, a, b);
        case op::JGE: return refine(op::JSGE, a, b);
        case op::JLT: return refine(op::JSLT, a, b);
        case op::JLE: return refine(op::JSLE, a, b);
        default: break;
        }
    }
    if (a.is_const() && b.is_const()) {
        bool t = false;
        switch (code) {
        case op::JGT: t = unsigned_lt(b.lo, a.lo); break;
        case op::JGE: t = !unsigned_lt(a.lo, b.lo); break;
        case op::JLT: t = unsigned_lt(a.lo, b.lo); break;
        case op::JLE: t = !unsigned_lt(b.lo, a.lo); break;
        default: break;
        }
        Refined r;
        (t ? r.taken : r.fall) = std::pair{a, b};
        return r;
    }
    return both();
}

struct Checkpoint {
    std::uint32_t node;
    State state;
};

struct NodeInfo {
    std::int64_t parent;
    std::uint32_t pending = 0;
    bool complete = false;
};

struct WorkItem {
    std::uint32_t node;
    std::uint32_t pc;
    State state;
    std::vector<std::pair<std::uint32_t, std::uint32_t>> backedges; // (jump pc, times taken)
};

constexpr std::size_t MAX_CHECKPOINTS_PER_PC = 64;

class Analyzer {
  public:
    Analyzer(const Program& prog, const VerifierConfig& cfg, const ContextLayout& layout)
        : prog_(prog), cfg_(cfg), layout_(layout), n_(prog.instructions.size()) {}

    Verdict run() {
        Verdict v;
        try {
            structural_checks();
            explore();
            v.accepted = true;
        } catch (const Reject& r) {
            v.accepted = false;
            v.rejection_class = r.cls;
            v.message = r.message;
            v.insn = fault_pc_;
            v.registers = fault_regs_;
        }
        v.analyzed_insns = analyzed_;
        return v;
    }

  private:
    const Program& prog_;
    const VerifierConfig& cfg_;
    const ContextLayout& layout_;
    std::size_t n_;
    std::vector<bool> join_point_;
    std::vector<NodeInfo> nodes_;
    std::unordered_map<std::uint32_t, std::vector<Checkpoint>> checkpoints_;
    std::uint64_t analyzed_ = 0;
    std::uint32_t next_id_ = 1;
    int fault_pc_ = -1;
    std::string fault_regs_;
    const State* current_ = nullptr;

    [[noreturn]] void reject(RejectionClass cls, int pc, std::string message) {
        fault_pc_ = pc;
        if (current_) fault_regs_ = summarize(*current_);
        throw Reject{cls, std::move(message)};
    }

    std::string summarize(const State& st) const {
        std::string out;
        for (int r = 0; r < NUM_REGISTERS; ++r) {
            if (st.regs[r].cls == VClass::UNINIT) continue;
            if (!out.empty()) out += ' ';
            out += "r" + std::to_string(r) + "=" + describe(st.regs[r], prog_);
        }
        return out;
    }

    std::string reg_desc(const State& st, int r) const { return describe(st.regs[r], prog_); }

    void structural_checks() {
        if (n_ == 0) reject(RejectionClass::MALFORMED, -1, "empty program");
        if (n_ > MAX_PROGRAM_INSNS) reject(RejectionClass::MALFORMED, -1, "program exceeds 65536 instructions");
        for (std::size_t m = 0; m < prog_.maps.size(); ++m) {
            auto err = validate(prog_.maps[m]);
            if (!err.empty()) reject(RejectionClass::MALFORMED, -1, "invalid map '" + prog_.maps[m].name + "': " + err);
        }
        if (cfg_.max_stack == 0 || cfg_.max_stack % 8 != 0 || cfg_.max_loop_iterations == 0 ||
            cfg_.max_total_instructions == 0) {
            reject(RejectionClass::MALFORMED, -1, "invalid verifier configuration");
        }
        join_point_.assign(n_ + 1, false);
        join_point_[0] = true;
        for (std::size_t pc = 0; pc < n_; ++pc) {
            const auto& insn = prog_.instructions[pc];
            const int ipc = static_cast<int>(pc);
            if (!is_defined_opcode(insn.opcode)) {
                reject(RejectionClass::MALFORMED, ipc, "unknown opcode 0x" + to_hex(std::span(&insn.opcode, 1)));
            }
            if (insn.dst >= NUM_REGISTERS || insn.src >= NUM_REGISTERS) {
                reject(RejectionClass::MALFORMED, ipc, "invalid register index");
            }
            const auto cls = op::class_of(insn.opcode);
            if ((cls == op::CLS_ALU64 || cls == op::CLS_LDX || cls == op::CLS_LD) && insn.dst == R10_FRAME) {
                reject(RejectionClass::MALFORMED, ipc, "frame pointer r10 is read only");
            }
            if (cls == op::CLS_LD) {
                if (insn.src != op::PSEUDO_MAP) reject(RejectionClass::MALFORMED, ipc, "ld_map without map marker");
                if (insn.imm < 0 || static_cast<std::size_t>(insn.imm) >= prog_.maps.size()) {
                    reject(RejectionClass::MALFORMED, ipc, "ld_map references undeclared map slot " + std::to_string(insn.imm));
                }
            }
            if (is_jump(insn)) {
                auto target = static_cast<std::int64_t>(pc) + 1 + insn.offset;
                if (target < 0 || target >= static_cast<std::int64_t>(n_)) {
                    reject(RejectionClass::MALFORMED, ipc, "jump out of range to " + std::to_string(target));
                }
                join_point_[static_cast<std::size_t>(target)] = true;
            }
        }
    }

    State initial_state() const {
        State st;
        st.regs[R1].cls = VClass::CTX_REF;
        st.regs[R1].offset = Interval::constant(0);
        st.regs[R1].region_size = layout_.size;
        st.regs[R10_FRAME].cls = VClass::STACK_REF;
        st.regs[R10_FRAME].offset = Interval::constant(0);
        st.regs[R10_FRAME].region_size = cfg_.max_stack;
        st.stack_init.assign(cfg_.max_stack, 0);
        st.spills.assign(cfg_.max_stack / 8, std::nullopt);
        return st;
    }

    std::uint32_t new_node(std::int64_t parent) {
        nodes_.push_back({parent, 0, false});
        if (parent >= 0) ++nodes_[static_cast<std::size_t>(parent)].pending;
        return static_cast<std::uint32_t>(nodes_.size() - 1);
    }

    void finish(std::uint32_t node) {
        std::int64_t cur = node;
        while (cur >= 0) {
            auto& info = nodes_[static_cast<std::size_t>(cur)];
            if (info.pending > 0 || info.complete) return;
            info.complete = true;
            cur = info.parent;
            if (cur >= 0) --nodes_[static_cast<std::size_t>(cur)].pending;
        }
    }

    void explore() {
        std::vector<WorkItem> work;
        work.push_back({new_node(-1), 0, initial_state(), {}});
        while (!work.empty()) {
            auto item = std::move(work.back());
            work.pop_back();
            run_node(item, work);
        }
    }

    // Returns true when the state is covered by a completed exploration.
    bool checkpoint(const WorkItem& item) {
        auto& list = checkpoints_[item.pc];
        for (const auto& cp : list) {
            if (!state_subsumes(cp.state, item.state)) continue;
            if (nodes_[cp.node].complete) return true;
            // An incomplete checkpoint is an ancestor on the current path.
            if (state_equal(cp.state, item.state)) {
                reject(RejectionClass::UNBOUNDED_LOOP, static_cast<int>(item.pc),
                       "infinite loop detected: abstract state repeats with no progress");
            }
        }
        if (list.size() < MAX_CHECKPOINTS_PER_PC) list.push_back({item.node, item.state});
        return false;
    }

    void run_node(WorkItem& item, std::vector<WorkItem>& work) {
        State& st = item.state;
        current_ = &st;
        if (checkpoint(item)) {
            finish(item.node);
            return;
        }
        std::uint32_t pc = item.pc;
        bool first = true;
        for (;;) {
            if (pc >= n_) {
                reject(RejectionClass::MALFORMED, static_cast<int>(n_ - 1), "execution falls through past the last instruction");
            }
            if (!first && join_point_[pc]) {
                // Hand over to a child node so the join point gets a checkpoint.
                work.push_back({new_node(item.node), pc, std::move(st), std::move(item.backedges)});
                return;
            }
            first = false;
            if (++analyzed_ > cfg_.max_total_instructions) {
                reject(RejectionClass::UNBOUNDED_LOOP, static_cast<int>(pc),
                       "analysis budget of " + std::to_string(cfg_.max_total_instructions) + " instructions exhausted");
            }
            const auto& insn = prog_.instructions[pc];
            const int ipc = static_cast<int>(pc);
            switch (op::class_of(insn.opcode)) {
            case op::CLS_ALU64: do_alu(insn, ipc, st); ++pc; break;
            case op::CLS_LD: {
                auto& d = st.regs[insn.dst];
                d = AbstractValue{};
                d.cls = VClass::MAP_HANDLE;
                d.map = insn.imm;
                ++pc;
                break;
            }
            case op::CLS_LDX: do_load(insn, ipc, st); ++pc; break;
            case op::CLS_ST:
            case op::CLS_STX: do_store(insn, ipc, st); ++pc; break;
            case op::CLS_JMP: {
                const auto code = op::jmp_op(insn.opcode);
                if (code == op::EXIT) {
                    check_exit(ipc, st);
                    finish(item.node);
                    return;
                }
                if (code == op::CALL) {
                    do_call(insn, ipc, st);
                    ++pc;
                    break;
                }
                const auto target = static_cast<std::uint32_t>(static_cast<std::int64_t>(pc) + 1 + insn.offset);
                if (code == op::JA) {
                    auto edges = item.backedges;
                    count_backedge(ipc, target, edges);
                    work.push_back({new_node(item.node), target, std::move(st), std::move(edges)});
                    return;
                }
                branch(insn, ipc, target, item, work);
                return;
            }
            default: reject(RejectionClass::MALFORMED, ipc, "unknown instruction class");
            }
        }
    }

    void count_backedge(int pc, std::uint32_t target, std::vector<std::pair<std::uint32_t, std::uint32_t>>& edges) {
        if (target > static_cast<std::uint32_t>(pc)) return;
        auto it = std::find_if(edges.begin(), edges.end(), [&](const auto& e) { return e.first == static_cast<std::uint32_t>(pc); });
        if (it == edges.end()) {
            edges.emplace_back(static_cast<std::uint32_t>(pc), 0);
            it = edges.end() - 1;
        }
        if (++it->second > cfg_.max_loop_iterations) {
            reject(RejectionClass::UNBOUNDED_LOOP, pc,
                   "loop at insn " + std::to_string(pc) + " not bounded within " +
                       std::to_string(cfg_.max_loop_iterations) + " iterations");
        }
    }

    const AbstractValue& read_reg(const State& st, int pc, std::uint8_t r) {
        if (st.regs[r].cls == VClass::UNINIT) {
            reject(RejectionClass::MALFORMED, pc, "R" + std::to_string(r) + " !read_ok (uninitialized register read)");
        }
        return st.regs[r];
    }

    void do_alu(const Instruction& insn, int pc, State& st) {
        const auto code = op::alu_op(insn.opcode);
        AbstractValue src = AbstractValue::scalar(Interval::constant(insn.imm));
        if (code != op::NEG && op::uses_reg(insn.opcode)) {
            src = read_reg(st, pc, insn.src);
        }
        if (code == op::MOV) {
            st.regs[insn.dst] = src;
            return;
        }
        AbstractValue dst = read_reg(st, pc, insn.dst);
        const std::string rd = "R" + std::to_string(insn.dst);

        if (dst.cls == VClass::MAP_VALUE_OR_NULL || src.cls == VClass::MAP_VALUE_OR_NULL) {
            reject(RejectionClass::NULL_DEREF, pc,
                   "pointer arithmetic on map_value_or_null prohibited; must check != NULL first");
        }
        if (dst.cls == VClass::SCALAR && src.cls == VClass::SCALAR) {
            if ((code == op::DIV || code == op::MOD) && src.range.contains(0)) {
                std::string what = op::uses_reg(insn.opcode) ? "R" + std::to_string(insn.src) : std::string("immediate");
                reject(RejectionClass::DIV_BY_ZERO, pc,
                       "division by zero: divisor " + what + " range " + describe(src, prog_) + " includes 0");
            }
            st.regs[insn.dst] = AbstractValue::scalar(scalar_alu(code, dst.range, code == op::NEG ? dst.range : src.range));
            return;
        }
        if (code == op::DIV || code == op::MOD) {
            reject(RejectionClass::MALFORMED, pc, "division on pointer operand");
        }
        if (dst.cls == VClass::MAP_HANDLE || src.cls == VClass::MAP_HANDLE) {
            reject(RejectionClass::MALFORMED, pc, "arithmetic on map handle prohibited");
        }
        if (dst.is_region_ref() && src.cls == VClass::SCALAR && (code == op::ADD || code == op::SUB)) {
            auto off = code == op::ADD ? scalar_alu(op::ADD, dst.offset, src.range) : scalar_alu(op::SUB, dst.offset, src.range);
            if (off == Interval::top()) {
                reject(RejectionClass::OUT_OF_BOUNDS, pc, rd + " pointer offset unbounded after arithmetic");
            }
            dst.offset = off;
            st.regs[insn.dst] = dst;
            return;
        }
        if (dst.cls == VClass::SCALAR && src.is_region_ref() && code == op::ADD) {
            auto ptr = src;
            ptr.offset = scalar_alu(op::ADD, src.offset, dst.range);
            if (ptr.offset == Interval::top()) {
                reject(RejectionClass::OUT_OF_BOUNDS, pc, rd + " pointer offset unbounded after arithmetic");
            }
            st.regs[insn.dst] = ptr;
            return;
        }
        if (dst.is_region_ref() && src.is_region_ref() && code == op::SUB && dst.cls == src.cls && dst.map == src.map) {
            st.regs[insn.dst] = AbstractValue::scalar(Interval::top());
            return;
        }
        reject(RejectionClass::MALFORMED, pc, "invalid pointer arithmetic on " + rd + " (" + describe(dst, prog_) + ")");
    }

    struct Access {
        __int128 lo;  // first byte
        __int128 end; // one past the last byte
    };

    Access span_of(const AbstractValue& base, std::int16_t off, int width) const {
        return {static_cast<__int128>(base.offset.lo) + off, static_cast<__int128>(base.offset.hi) + off + width};
    }

    static std::string range_text(const Access& a) {
        return "[" + std::to_string(static_cast<std::int64_t>(a.lo)) + "," + std::to_string(static_cast<std::int64_t>(a.end - 1)) + "]";
    }

    // Validates a dereference of `base` and returns the memory region kind.
    void check_region(const AbstractValue& base, std::uint8_t reg, std::int16_t off, int width, bool store, int pc) {
        const std::string rn = "R" + std::to_string(reg);
        switch (base.cls) {
        case VClass::UNINIT:
            reject(RejectionClass::MALFORMED, pc, rn + " !read_ok (uninitialized register read)");
        case VClass::MAP_VALUE_OR_NULL:
            reject(RejectionClass::NULL_DEREF, pc, rn + " is a pointer to map_value_or_null; must check != NULL before dereference");
        case VClass::SCALAR:
            if (base.range.is_const() && base.range.lo == 0) {
                reject(RejectionClass::NULL_DEREF, pc, rn + " is NULL; dereference of a null pointer");
            }
            reject(RejectionClass::OUT_OF_BOUNDS, pc, rn + " invalid memory access through scalar " + describe(base, prog_));
        case VClass::MAP_HANDLE:
            reject(RejectionClass::OUT_OF_BOUNDS, pc, rn + " invalid memory access through map handle");
        case VClass::CTX_REF: {
            auto a = span_of(base, off, width);
            if (a.lo < 0 || a.end > layout_.size) {
                reject(RejectionClass::OUT_OF_BOUNDS, pc,
                       "invalid context access at offset " + range_text(a) + " (context size " + std::to_string(layout_.size) + ")");
            }
            if (store && !layout_.writable(static_cast<std::int64_t>(a.lo), static_cast<std::int64_t>(a.end))) {
                reject(RejectionClass::INPUT_FIELD_WRITE, pc,
                       "write to read-only context field at offset " + range_text(a) + "; writable span is [" +
                           std::to_string(layout_.writable_begin) + "," + std::to_string(layout_.writable_end) + ")");
            }
            return;
        }
        case VClass::STACK_REF: {
            auto a = span_of(base, off, width);
            if (a.lo < -static_cast<__int128>(cfg_.max_stack)) {
                reject(RejectionClass::STACK_OVERFLOW, pc,
                       "stack access at frame offset " + range_text(a) + " exceeds max_stack " + std::to_string(cfg_.max_stack));
            }
            if (a.end > 0) {
                reject(RejectionClass::OUT_OF_BOUNDS, pc, "invalid stack access at frame offset " + range_text(a) + " above frame top");
            }
            return;
        }
        case VClass::MAP_VALUE_REF: {
            auto a = span_of(base, off, width);
            if (a.lo < 0 || a.end > base.region_size) {
                reject(RejectionClass::OUT_OF_BOUNDS, pc,
                       "invalid map_value access at offset " + range_text(a) + " (value_size " + std::to_string(base.region_size) + ")");
            }
            return;
        }
        }
    }

    std::size_t stack_index(std::int64_t frame_off) const {
        return static_cast<std::size_t>(frame_off + static_cast<std::int64_t>(cfg_.max_stack));
    }

    void require_stack_init(const State& st, const Access& a, int pc, const std::string& what) {
        for (auto b = a.lo; b < a.end; ++b) {
            if (!st.stack_init[stack_index(static_cast<std::int64_t>(b))]) {
                reject(RejectionClass::MALFORMED, pc,
                       what + " reads uninitialized stack byte at frame offset " + std::to_string(static_cast<std::int64_t>(b)));
            }
        }
    }

    void do_load(const Instruction& insn, int pc, State& st) {
        const int width = access_width(insn.opcode);
        const auto& base = st.regs[insn.src];
        check_region(base, insn.src, insn.offset, width, false, pc);
        AbstractValue result = AbstractValue::scalar(load_range(width));
        if (base.cls == VClass::STACK_REF) {
            auto a = span_of(base, insn.offset, width);
            require_stack_init(st, a, pc, "R" + std::to_string(insn.dst) + " load");
            if (a.end - a.lo == width && width == 8 && base.offset.is_const()) {
                auto idx = stack_index(static_cast<std::int64_t>(a.lo));
                if (idx % 8 == 0 && st.spills[idx / 8]) result = *st.spills[idx / 8];
            }
        }
        st.regs[insn.dst] = result;
    }

    void do_store(const Instruction& insn, int pc, State& st) {
        const int width = access_width(insn.opcode);
        const bool from_reg = op::class_of(insn.opcode) == op::CLS_STX;
        AbstractValue value = AbstractValue::scalar(Interval::constant(insn.imm));
        if (from_reg) value = read_reg(st, pc, insn.src);
        const auto& base = st.regs[insn.dst];
        check_region(base, insn.dst, insn.offset, width, true, pc);
        if (base.cls != VClass::STACK_REF) {
            if (value.is_pointer()) {
                reject(RejectionClass::MALFORMED, pc, "R" + std::to_string(insn.src) + " leaks pointer into " +
                                                          (base.cls == VClass::CTX_REF ? "context" : "map value"));
            }
            return;
        }
        auto a = span_of(base, insn.offset, width);
        const bool exact = base.offset.is_const();
        for (auto b = a.lo; b < a.end; ++b) {
            auto idx = stack_index(static_cast<std::int64_t>(b));
            if (exact) st.stack_init[idx] = 1;
            st.spills[idx / 8].reset();
        }
        if (exact && width == 8) {
            auto idx = stack_index(static_cast<std::int64_t>(a.lo));
            if (idx % 8 == 0) {
                if (value.cls == VClass::SCALAR && width < 8) value.range = load_range(width);
                st.spills[idx / 8] = value;
            }
        } else if (value.is_pointer()) {
            reject(RejectionClass::MALFORMED, pc, "pointer spill must be an aligned 8-byte store at a constant offset");
        }
    }

    void require_map(const State& st, int pc, std::uint8_t r) {
        const auto& v = read_reg(st, pc, r);
        if (v.cls != VClass::MAP_HANDLE) {
            reject(RejectionClass::MALFORMED, pc, "R" + std::to_string(r) + " type=" + describe(v, prog_) + " expected=map_ptr");
        }
    }

    void require_stack_buffer(const State& st, int pc, std::uint8_t r, std::uint32_t size, const char* what) {
        const auto& v = read_reg(st, pc, r);
        if (v.cls != VClass::STACK_REF) {
            reject(RejectionClass::MALFORMED, pc,
                   "R" + std::to_string(r) + " type=" + describe(v, prog_) + " expected=fp (" + what + " pointer)");
        }
        check_region(v, r, 0, static_cast<int>(size), false, pc);
        require_stack_init(st, span_of(v, 0, static_cast<int>(size)), pc, std::string(what) + " argument");
    }

    void do_call(const Instruction& insn, int pc, State& st) {
        const auto id = insn.imm;
        const auto& allowed = cfg_.helpers_for(prog_.hook);
        if (std::find(allowed.begin(), allowed.end(), id) == allowed.end()) {
            std::string list;
            for (auto h : allowed) list += (list.empty() ? "" : ", ") + std::to_string(h);
            reject(RejectionClass::ILLEGAL_HELPER, pc,
                   "helper " + std::to_string(id) + " not allowed for hook " + std::string(to_string(prog_.hook)) +
                       " (allowed: " + list + ")");
        }
        AbstractValue ret = AbstractValue::scalar({-4095, 0});
        switch (id) {
        case helper::MAP_LOOKUP: {
            require_map(st, pc, 1);
            const auto& desc = prog_.maps[static_cast<std::size_t>(st.regs[1].map)];
            require_stack_buffer(st, pc, 2, desc.key_size, "key");
            ret = AbstractValue{};
            ret.cls = VClass::MAP_VALUE_OR_NULL;
            ret.map = st.regs[1].map;
            ret.region_size = desc.value_size;
            ret.offset = Interval::constant(0);
            ret.id = next_id_++;
            break;
        }
        case helper::MAP_UPDATE: {
            require_map(st, pc, 1);
            const auto& desc = prog_.maps[static_cast<std::size_t>(st.regs[1].map)];
            require_stack_buffer(st, pc, 2, desc.key_size, "key");
            require_stack_buffer(st, pc, 3, desc.value_size, "value");
            if (read_reg(st, pc, 4).cls != VClass::SCALAR) {
                reject(RejectionClass::MALFORMED, pc, "R4 flags must be a scalar");
            }
            break;
        }
        case helper::MAP_DELETE: {
            require_map(st, pc, 1);
            const auto& desc = prog_.maps[static_cast<std::size_t>(st.regs[1].map)];
            require_stack_buffer(st, pc, 2, desc.key_size, "key");
            break;
        }
        case helper::TRACE_LOG:
            if (read_reg(st, pc, 1).cls != VClass::SCALAR) {
                reject(RejectionClass::MALFORMED, pc, "R1 trace_log argument must be a scalar");
            }
            ret = AbstractValue::scalar(Interval::constant(0));
            break;
        default:
            reject(RejectionClass::ILLEGAL_HELPER, pc, "unknown helper " + std::to_string(id));
        }
        for (int r = 1; r <= 5; ++r) st.regs[r] = AbstractValue{};
        st.regs[0] = ret;
    }

    void check_exit(int pc, const State& st) {
        const auto& r0 = st.regs[0];
        if (r0.cls == VClass::UNINIT) {
            reject(RejectionClass::MALFORMED, pc, "R0 !read_ok at exit (return value not set)");
        }
        if (r0.cls != VClass::SCALAR) {
            reject(RejectionClass::MALFORMED, pc, "R0 leaks " + describe(r0, prog_) + " as return value");
        }
    }

    static void resolve_null(State& st, std::uint32_t id, bool is_null) {
        auto apply = [&](AbstractValue& v) {
            if (v.cls != VClass::MAP_VALUE_OR_NULL || v.id != id) return;
            if (is_null) {
                v = AbstractValue::scalar(Interval::constant(0));
            } else {
                v.cls = VClass::MAP_VALUE_REF;
                v.id = 0;
            }
        };
        for (auto& r : st.regs) apply(r);
        for (auto& s : st.spills) {
            if (s) apply(*s);
        }
    }

    void push_edge(WorkItem& item, std::vector<WorkItem>& work, State st, std::uint32_t target, int pc, bool jump) {
        auto edges = item.backedges;
        if (jump) count_backedge(pc, target, edges);
        work.push_back({new_node(item.node), target, std::move(st), std::move(edges)});
    }

    void branch(const Instruction& insn, int pc, std::uint32_t target, WorkItem& item, std::vector<WorkItem>& work) {
        State& st = item.state;
        const auto code = op::jmp_op(insn.opcode);
        const auto& dst = read_reg(st, pc, insn.dst);
        AbstractValue src = AbstractValue::scalar(Interval::constant(insn.imm));
        if (op::uses_reg(insn.opcode)) src = read_reg(st, pc, insn.src);
        const auto fall = static_cast<std::uint32_t>(pc + 1);

        // Edges are pushed fall-through first so the jump edge is explored first.
        if (dst.cls == VClass::MAP_VALUE_OR_NULL && src.cls == VClass::SCALAR && src.range == Interval::constant(0) &&
            (code == op::JEQ || code == op::JNE)) {
            State null_state = st;
            State ref_state = st;
            resolve_null(null_state, dst.id, true);
            resolve_null(ref_state, dst.id, false);
            if (code == op::JEQ) {
                push_edge(item, work, std::move(ref_state), fall, pc, false);
                push_edge(item, work, std::move(null_state), target, pc, true);
            } else {
                push_edge(item, work, std::move(null_state), fall, pc, false);
                push_edge(item, work, std::move(ref_state), target, pc, true);
            }
            return;
        }
        if (dst.cls != VClass::SCALAR || src.cls != VClass::SCALAR) {
            State copy = st;
            push_edge(item, work, std::move(copy), fall, pc, false);
            push_edge(item, work, std::move(st), target, pc, true);
            return;
        }
        Refined r;
        if (op::uses_reg(insn.opcode) && insn.src == insn.dst) {
            bool t = code == op::JEQ || code == op::JGE || code == op::JLE || code == op::JSGE || code == op::JSLE;
            (t ? r.taken : r.fall) = std::pair{dst.range, dst.range};
        } else {
            r = refine(code, dst.range, src.range);
        }
        auto apply = [&](State s, const std::pair<Interval, Interval>& p) {
            s.regs[insn.dst].range = p.first;
            if (op::uses_reg(insn.opcode) && insn.src != insn.dst) s.regs[insn.src].range = p.second;
            return s;
        };
        const bool both = r.taken && r.fall;
        if (r.fall) push_edge(item, work, both ? apply(st, *r.fall) : apply(std::move(st), *r.fall), fall, pc, false);
        if (r.taken) push_edge(item, work, apply(std::move(st), *r.taken), target, pc, true);
        if (!r.taken && !r.fall) finish(item.node);
    }
};

} // namespace

Verdict verify(const Program& program, const VerifierConfig& config, const ContextLayout& layout) {
    return Analyzer(program, config, layout).run();
}

std::string explain(const Verdict& verdict) {
    std::ostringstream out;
    if (verdict.accepted) {
        out << "VERIFIER ACCEPT (" << verdict.analyzed_insns << " instructions analyzed)";
        return out.str();
    }
    out << "VERIFIER REJECT: " << verdict.message;
    if (verdict.insn >= 0) out << " at insn " << verdict.insn;
    out << '\n';
    if (verdict.rejection_class) out << "  class: " << to_string(*verdict.rejection_class) << '\n';
    if (!verdict.registers.empty()) out << "  state: " << verdict.registers << '\n';
    out << "  analyzed: " << verdict.analyzed_insns << " instructions";
    return out.str();
}

} // namespace cclpol
