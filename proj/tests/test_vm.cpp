// Copyright (c) cclpol contributors.
// SPDX-License-Identifier: Apache-2.0
#include <catch_amalgamated.hpp>

#include <cstring>
#include <limits>
#include <random>

#include "cclpol/verifier.hpp"
#include "cclpol/vm.hpp"
#include "test_support.hpp"

using namespace cclpol;
using cclpol::testing::load;

namespace {

constexpr std::int64_t MIN64 = std::numeric_limits<std::int64_t>::min();
constexpr std::int64_t MAX64 = std::numeric_limits<std::int64_t>::max();

struct LatencyState {
    std::uint64_t avg_latency_ns;
    std::uint32_t channels;
    std::uint32_t samples;
};

std::vector<std::uint8_t> bytes_of(const LatencyState& s) {
    std::vector<std::uint8_t> out(sizeof s);
    std::memcpy(out.data(), &s, sizeof s);
    return out;
}

std::vector<std::uint8_t> key_of(std::uint32_t k) {
    std::vector<std::uint8_t> out(4);
    std::memcpy(out.data(), &k, 4);
    return out;
}

ContextBuffer tuner_context(std::uint64_t msg_size, std::uint32_t comm_id) {
    ContextBuffer c;
    c.size = tuner_ctx::SIZE;
    c.put<std::uint32_t>(tuner_ctx::COLLECTIVE, 0);
    c.put<std::uint64_t>(tuner_ctx::MSG_SIZE, msg_size);
    c.put<std::uint32_t>(tuner_ctx::N_RANKS, 8);
    c.put<std::uint32_t>(tuner_ctx::COMM_ID, comm_id);
    c.put<std::uint32_t>(tuner_ctx::ALGORITHM, UNSET);
    c.put<std::uint32_t>(tuner_ctx::PROTOCOL, UNSET);
    c.put<std::uint32_t>(tuner_ctx::N_CHANNELS, 0);
    return c;
}

ContextBuffer profiler_context(std::uint64_t a, std::uint64_t b) {
    ContextBuffer c;
    c.size = profiler_ctx::SIZE;
    c.put<std::uint64_t>(profiler_ctx::LATENCY_NS, a);
    c.put<std::uint64_t>(profiler_ctx::MSG_SIZE, b);
    return c;
}

std::int64_t run_both(const std::string& src, std::uint64_t a, std::uint64_t b) {
    MapRegistry reg;
    auto prog = prepare(assemble(src), reg);
    auto c1 = profiler_context(a, b);
    c1.size = prog->layout.size;
    auto c2 = c1;
    auto fast = execute(*prog, c1.span(), {ExecMode::FAST});
    auto checked = execute(*prog, c2.span(), {ExecMode::CHECKED});
    CHECK(fast == checked);
    return fast;
}

// Independent ALU reference written in terms of unsigned arithmetic.
std::uint64_t alu_oracle(const std::string& op, std::uint64_t a, std::uint64_t b) {
    if (op == "add") return a + b;
    if (op == "sub") return a - b;
    if (op == "mul") return a * b;
    if (op == "div") return b == 0 ? 0 : a / b;
    if (op == "mod") return b == 0 ? 0 : a % b;
    if (op == "and") return a & b;
    if (op == "or") return a | b;
    if (op == "xor") return a ^ b;
    if (op == "lsh") return a << (b % 64);
    if (op == "rsh") return a >> (b % 64);
    if (op == "arsh") {
        const unsigned s = b % 64;
        std::uint64_t r = a >> s;
        if (s != 0 && (a >> 63)) r |= ~std::uint64_t{0} << (64 - s);
        return r;
    }
    return 0;
}

bool jump_oracle(const std::string& op, std::int64_t a, std::int64_t b) {
    const auto ua = static_cast<std::uint64_t>(a), ub = static_cast<std::uint64_t>(b);
    if (op == "jeq") return a == b;
    if (op == "jne") return a != b;
    if (op == "jgt") return ua > ub;
    if (op == "jge") return ua >= ub;
    if (op == "jlt") return ua < ub;
    if (op == "jle") return ua <= ub;
    if (op == "jsgt") return a > b;
    if (op == "jsge") return a >= b;
    if (op == "jslt") return a < b;
    return a <= b; // jsle
}

} // namespace

TEST_CASE("ALU semantics on edge values", "[vm]") {
    const std::int64_t edges[] = {0, 1, -1, MIN64, MAX64, 63, 64, 65};
    for (std::string op : {"add", "sub", "mul", "div", "mod", "and", "or", "xor", "lsh", "rsh", "arsh"}) {
        for (auto a : edges) {
            for (auto b : edges) {
                if ((op == "div" || op == "mod") && b == 0) continue;
                auto src = ".hook profiler\nldxdw r0, [r1+8]\nldxdw r2, [r1+24]\n" + op + " r0, r2\nexit";
                auto got = run_both(src, static_cast<std::uint64_t>(a), static_cast<std::uint64_t>(b));
                INFO(op << " " << a << " " << b);
                CHECK(static_cast<std::uint64_t>(got) == alu_oracle(op, static_cast<std::uint64_t>(a), static_cast<std::uint64_t>(b)));
            }
        }
    }
    for (auto a : edges) {
        auto got = run_both(".hook profiler\nldxdw r0, [r1+8]\nneg r0\nexit", static_cast<std::uint64_t>(a), 0);
        CHECK(static_cast<std::uint64_t>(got) == 0 - static_cast<std::uint64_t>(a));
    }
}

TEST_CASE("immediates are sign extended", "[vm]") {
    CHECK(run_both("mov r0, -1\nexit", 0, 0) == -1);
    CHECK(run_both("mov r0, 0\nadd r0, 0xffffffff\nexit", 0, 0) == -1);
    CHECK(run_both("mov r0, 1\nlsh r0, 63\nexit", 0, 0) == MIN64);
    CHECK(run_both("mov r0, 1\nlsh r0, 65\nexit", 0, 0) == 2); // amount masked to 6 bits
}

TEST_CASE("conditional jumps follow signedness", "[vm]") {
    const std::int64_t edges[] = {0, 1, -1, MIN64, MAX64};
    for (std::string op : {"jeq", "jne", "jgt", "jge", "jlt", "jle", "jsgt", "jsge", "jslt", "jsle"}) {
        for (auto a : edges) {
            for (auto b : edges) {
                auto src = ".hook profiler\nldxdw r2, [r1+8]\nldxdw r3, [r1+24]\nmov r0, 1\n" + op +
                           " r2, r3, done\nmov r0, 0\ndone:\nexit";
                INFO(op << " " << a << " " << b);
                CHECK(run_both(src, static_cast<std::uint64_t>(a), static_cast<std::uint64_t>(b)) ==
                      (jump_oracle(op, a, b) ? 1 : 0));
            }
        }
    }
}

TEST_CASE("sub-word loads zero extend", "[vm]") {
    CHECK(run_both(".hook profiler\nldxb r0, [r1+8]\nexit", 0xfffffffffffffff0ull, 0) == 0xf0);
    CHECK(run_both(".hook profiler\nldxh r0, [r1+8]\nexit", 0xfffffffffffffff0ull, 0) == 0xfff0);
    CHECK(run_both(".hook profiler\nldxw r0, [r1+8]\nexit", 0xfffffffffffffff0ull, 0) == 0xfffffff0);
    CHECK(run_both("stw [r10-8], -1\nstw [r10-4], 0\nldxdw r0, [r10-8]\nexit", 0, 0) == 0xffffffff);
}

namespace {

struct TunerOutcome {
    std::int64_t r0;
    std::uint32_t algorithm, protocol, channels;
};

TunerOutcome run_adaptive_tuner(std::uint64_t msg_size, std::optional<LatencyState> entry) {
    MapRegistry reg;
    auto tuner = prepare(load("policies/size_aware_adaptive.cclpol"), reg);
    if (entry) reg.find("latency_map")->update(key_of(77), bytes_of(*entry));
    auto ctx = tuner_context(msg_size, 77);
    auto r0 = execute(*tuner, ctx.span(), {ExecMode::CHECKED});
    return {r0, ctx.get<std::uint32_t>(tuner_ctx::ALGORITHM), ctx.get<std::uint32_t>(tuner_ctx::PROTOCOL),
            ctx.get<std::uint32_t>(tuner_ctx::N_CHANNELS)};
}

} // namespace

TEST_CASE("size_aware_adaptive tuner: small message with low latency", "[vm][closed-loop]") {
    auto r = run_adaptive_tuner(16384, LatencyState{500000, 4, 0});
    CHECK(r.r0 == 0);
    CHECK(r.algorithm == static_cast<std::uint32_t>(Algorithm::TREE));
    CHECK(r.protocol == static_cast<std::uint32_t>(Protocol::SIMPLE));
    CHECK(r.channels == 4);
}

TEST_CASE("size_aware_adaptive tuner: large message with high latency grows channels", "[vm][closed-loop]") {
    auto r = run_adaptive_tuner(1048576, LatencyState{2000000, 4, 0});
    CHECK(r.algorithm == static_cast<std::uint32_t>(Algorithm::RING));
    CHECK(r.protocol == static_cast<std::uint32_t>(Protocol::SIMPLE));
    CHECK(r.channels == 5);
}

TEST_CASE("size_aware_adaptive tuner: absent entry", "[vm][closed-loop]") {
    auto r = run_adaptive_tuner(1048576, std::nullopt);
    CHECK(r.r0 == 0);
    CHECK(r.channels == 4);
    CHECK(r.algorithm == UNSET);
    CHECK(r.protocol == UNSET);
}

TEST_CASE("size_aware_adaptive tuner: channel growth saturates at 16", "[vm][closed-loop]") {
    auto r = run_adaptive_tuner(1048576, LatencyState{2000000, 16, 0});
    CHECK(r.channels == 16);
    CHECK(run_adaptive_tuner(32768, LatencyState{2000000, 7, 0}).algorithm == static_cast<std::uint32_t>(Algorithm::TREE));
    CHECK(run_adaptive_tuner(32769, LatencyState{1000000, 7, 0}).channels == 7); // threshold is strict
}

TEST_CASE("latency profiler writes through the shared map", "[vm][closed-loop]") {
    MapRegistry reg;
    auto profiler = prepare(load("corpus/safe/record_latency.cclpol"), reg);
    auto tuner = prepare(load("policies/size_aware_adaptive.cclpol"), reg);
    CHECK(profiler->maps[0] == tuner->maps[0]);

    ContextBuffer ev;
    ev.size = profiler_ctx::SIZE;
    ev.put<std::uint32_t>(profiler_ctx::COMM_ID, 77);
    ev.put<std::uint64_t>(profiler_ctx::LATENCY_NS, 2500000);
    ev.put<std::uint32_t>(profiler_ctx::N_CHANNELS, 6);

    // Absent entry: the profiler returns without touching the map.
    CHECK(execute(*profiler, ev.span(), {ExecMode::CHECKED}) == 0);
    CHECK(reg.find("latency_map")->size() == 0);

    reg.find("latency_map")->update(key_of(77), bytes_of({0, 1, 0}));
    CHECK(execute(*profiler, ev.span(), {ExecMode::CHECKED}) == 0);
    auto v = reg.find("latency_map")->lookup(key_of(77));
    REQUIRE(v);
    LatencyState st;
    std::memcpy(&st, v->data(), sizeof st);
    CHECK(st.avg_latency_ns == 2500000);
    CHECK(st.channels == 6);

    auto ctx = tuner_context(1 << 20, 77);
    execute(*tuner, ctx.span());
    CHECK(ctx.get<std::uint32_t>(tuner_ctx::N_CHANNELS) == 7);
}

TEST_CASE("helper 1 returns null exactly when the entry is absent", "[vm]") {
    MapRegistry reg;
    auto prog = prepare(assemble(R"(
        .map m hash key=4 value=8 entries=4
        ldxw r2, [r1+20]
        stxw [r10-4], r2
        ld_map r1, m
        mov r2, r10
        add r2, -4
        call 1
        jeq r0, 0, miss
        ldxdw r0, [r0+0]
        exit
    miss:
        mov r0, -1
        exit)"),
                        reg);
    auto ctx = tuner_context(0, 5);
    CHECK(execute(*prog, ctx.span(), {ExecMode::CHECKED}) == -1);
    std::vector<std::uint8_t> v = {42, 0, 0, 0, 0, 0, 0, 0};
    reg.find("m")->update(key_of(5), v);
    CHECK(execute(*prog, ctx.span(), {ExecMode::CHECKED}) == 42);
}

TEST_CASE("update and delete helpers report status codes", "[vm]") {
    MapRegistry reg;
    auto prog = prepare(assemble(R"(
        .map m hash key=4 value=8 entries=1
        .map a array key=4 value=8 entries=1
        stw [r10-4], 1
        stdw [r10-16], 9
        ld_map r1, m
        mov r2, r10
        add r2, -4
        mov r3, r10
        add r3, -16
        mov r4, 0
        call 2
        mov r6, r0             ; 0: inserted
        stw [r10-4], 2
        ld_map r1, m
        mov r2, r10
        add r2, -4
        mov r3, r10
        add r3, -16
        mov r4, 0
        call 2
        mov r7, r0             ; full
        ld_map r1, a
        mov r2, r10
        add r2, -4
        call 3
        mov r8, r0             ; delete on array
        mov r0, r6
        lsh r0, 16
        sub r0, r7
        lsh r0, 16
        sub r0, r8
        exit)"),
                        reg);
    auto ctx = tuner_context(0, 0);
    auto r = execute(*prog, ctx.span(), {ExecMode::CHECKED});
    CHECK(r == ((0 - (helper_code(MapStatus::E_FULL))) << 16) - helper_code(MapStatus::E_UNSUPPORTED));
}

TEST_CASE("trace_log writes into a bounded ring", "[vm]") {
    MapRegistry reg;
    auto prog = prepare(assemble("mov r6, 0\nloop:\nmov r1, r6\ncall 6\nadd r6, 1\njlt r6, 5000, loop\nmov r0, 0\nexit"), reg);
    TraceRing ring;
    auto ctx = tuner_context(0, 0);
    execute(*prog, ctx.span(), {ExecMode::FAST, &ring});
    CHECK(ring.total() == 5000);
    auto snap = ring.snapshot();
    REQUIRE(snap.size() == TraceRing::CAPACITY);
    CHECK(snap.front() == 5000 - static_cast<std::int64_t>(TraceRing::CAPACITY));
    CHECK(snap.back() == 4999);
}

TEST_CASE("checked mode catches what the verifier prevents", "[vm][checked]") {
    auto faults = [](const std::string& src, HookKind hook = HookKind::TUNER) {
        MapRegistry reg;
        auto p = assemble(src);
        p.hook = hook;
        auto prog = prepare(p, reg);
        ContextBuffer ctx = tuner_context(1 << 20, 3);
        ctx.size = layout_for(hook).size;
        try {
            execute(*prog, ctx.span(), {ExecMode::CHECKED, nullptr, 10000});
        } catch (const SafetyFault&) {
            return true;
        }
        return false;
    };
    CHECK(faults("stw [r1+8], 0\nmov r0, 0\nexit"));
    CHECK(faults("ldxw r0, [r1+36]\nexit"));
    CHECK(faults("stdw [r10-520], 0\nmov r0, 0\nexit"));
    CHECK(faults("ldxdw r0, [r10-8]\nexit"));
    CHECK(faults("mov r0, 1\nmov r2, 0\ndiv r0, r2\nexit"));
    CHECK(faults("loop:\nja loop"));
    CHECK(faults("exit"));
    CHECK(faults("mov r1, 0\ncall 99\nmov r0, 0\nexit"));
    CHECK(faults("mov r0, r3\nexit"));
    CHECK(faults("mov r0, 0"));
    CHECK_FALSE(faults("stw [r1+24], 1\nmov r0, 0\nexit"));
    CHECK(faults(cclpol::testing::read_text("corpus/unsafe/null_deref.cclpol"), HookKind::PROFILER));
}

TEST_CASE("checked fuzzing finds no faults in accepted programs", "[vm][fuzz]") {
    for (auto path : {"corpus/safe/noop.cclpol", "corpus/safe/lookup_update.cclpol", "corpus/safe/adaptive_channels.cclpol",
                      "corpus/safe/record_latency.cclpol", "policies/net_byte_counter.cclpol"}) {
        auto p = load(path);
        REQUIRE(verify(p).accepted);
        auto r = execute_checked_fuzz(p, 500, 7);
        INFO(path << " " << r.first_fault);
        CHECK(r.faults == 0);
    }
    CHECK(execute_checked_fuzz(load("corpus/safe/noop.cclpol"), 1, 0).faults == 0);
}

TEST_CASE("checked fuzzing flags unsafe programs", "[vm][fuzz]") {
    for (auto path : {"corpus/unsafe/null_deref.cclpol", "corpus/unsafe/out_of_bounds.cclpol",
                      "corpus/unsafe/input_field_write.cclpol", "corpus/unsafe/div_by_zero.cclpol",
                      "corpus/unsafe/stack_overflow.cclpol", "corpus/unsafe/illegal_helper.cclpol"}) {
        auto r = execute_checked_fuzz(load(path), 300, 11);
        INFO(path);
        CHECK(r.faults >= 1);
        CHECK_FALSE(r.first_fault.empty());
    }
}

TEST_CASE("parallel fuzz kernel matches the serial reference", "[vm][fuzz]") {
    for (auto path : {"corpus/unsafe/null_deref.cclpol", "corpus/safe/slo_enforcer.cclpol", "corpus/unsafe/div_by_zero.cclpol"}) {
        auto p = load(path);
        CHECK(execute_checked_fuzz_parallel(p, 400, 3) == execute_checked_fuzz(p, 400, 3));
    }
}

TEST_CASE("FAST and CHECKED agree on outputs and map effects", "[vm][differential]") {
    const char* programs[] = {"corpus/safe/noop.cclpol",           "corpus/safe/size_aware_v2.cclpol",
                              "corpus/safe/lookup_only.cclpol",    "corpus/safe/lookup_update.cclpol",
                              "corpus/safe/adaptive_channels.cclpol", "corpus/safe/slo_enforcer.cclpol",
                              "corpus/safe/record_latency.cclpol", "policies/net_byte_counter.cclpol",
                              "policies/latency_profiler.cclpol",  "policies/size_aware_adaptive.cclpol"};
    std::mt19937_64 rng(2024);
    for (auto path : programs) {
        auto program = load(path);
        for (int trial = 0; trial < 1000; ++trial) {
            MapRegistry ra, rb;
            auto pa = prepare(program, ra);
            auto pb = prepare(program, rb);
            ContextBuffer ca;
            ca.size = pa->layout.size;
            for (auto& b : ca.bytes) b = static_cast<std::uint8_t>(rng());
            if (trial % 2) ca.put<std::uint64_t>(8, rng() % (1ull << 31)); // plausible sizes
            const auto comm = ca.get<std::uint32_t>(program.hook == HookKind::TUNER ? tuner_ctx::COMM_ID : 0);
            for (std::size_t m = 0; m < pa->maps.size(); ++m) {
                const auto& d = pa->maps[m]->descriptor();
                if (rng() % 3 == 0) continue;
                std::vector<std::uint8_t> v(d.value_size);
                for (auto& b : v) b = static_cast<std::uint8_t>(rng() % 4 == 0 ? rng() : 0);
                auto k = key_of(d.kind == MapKind::ARRAY ? 0 : comm);
                pa->maps[m]->update(k, v);
                pb->maps[m]->update(k, v);
            }
            auto cb = ca;
            auto r1 = execute(*pa, ca.span(), {ExecMode::FAST});
            auto r2 = execute(*pb, cb.span(), {ExecMode::CHECKED});
            INFO(path << " trial " << trial);
            REQUIRE(r1 == r2);
            REQUIRE(ca.bytes == cb.bytes);
            REQUIRE(ra.dump() == rb.dump());
        }
    }
}

TEST_CASE("execution is deterministic", "[vm]") {
    auto program = load("corpus/safe/slo_enforcer.cclpol");
    std::string first;
    for (int rep = 0; rep < 3; ++rep) {
        MapRegistry reg;
        auto p = prepare(program, reg);
        reg.find("latency_map")->update(key_of(9), bytes_of({3000000, 5, 1}));
        auto ctx = tuner_context(8 << 20, 9);
        auto r0 = execute(*p, ctx.span());
        auto out = std::to_string(r0) + to_hex(ctx.span()) + reg.dump();
        if (rep == 0) first = out;
        CHECK(out == first);
    }
    CHECK(first.find("slo_violations 00000000 0100000000000000") != std::string::npos);
}
