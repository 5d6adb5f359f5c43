// Copyright (c) cclpol contributors.
// SPDX-License-Identifier: Apache-2.0
#include <catch_amalgamated.hpp>

#include <atomic>
#include <chrono>
#include <future>
#include <thread>

#include "cclpol/corpus.hpp"
#include "cclpol/reload.hpp"
#include "test_support.hpp"

using namespace cclpol;
using namespace std::chrono_literals;
using cclpol::testing::load;
using cclpol::testing::read_text;

TEST_CASE("successful reloads bump the generation by one", "[reload]") {
    Engine engine;
    CHECK(engine.slot(HookKind::TUNER).generation() == 0);
    const auto a = reload(engine, load("corpus/safe/noop.cclpol"));
    REQUIRE(a.ok());
    CHECK(a.generation == 1);
    REQUIRE(a.verdict);
    CHECK(a.verdict->accepted);
    const auto b = reload(engine, load("corpus/safe/size_aware_v2.cclpol"));
    REQUIRE(b.ok());
    CHECK(b.generation == 2);
    CHECK(b.total_ms >= b.verify_ms);
    CHECK(engine.invoke_tuner(1, Collective::ALLREDUCE, 1 << 20, 8).generation == 2);
    CHECK(unload(engine, HookKind::TUNER) == 3);
    CHECK(engine.invoke_tuner(1, Collective::ALLREDUCE, 1 << 20, 8).decision == Decision{});
}

TEST_CASE("rejected reload keeps the active program", "[reload]") {
    Engine engine;
    REQUIRE(reload(engine, load("corpus/safe/size_aware_v2.cclpol")).ok());
    const auto before = engine.invoke_tuner(1, Collective::ALLREDUCE, 1024, 8);
    const auto r = reload(engine, load("corpus/unsafe/input_field_write.cclpol"));
    CHECK(r.outcome == ReloadOutcome::REJECTED);
    REQUIRE(r.verdict);
    CHECK_FALSE(r.verdict->accepted);
    CHECK(r.generation == 1);
    const auto after = engine.invoke_tuner(1, Collective::ALLREDUCE, 1024, 8);
    CHECK(after.decision == before.decision);
    CHECK(after.generation == 1);
}

TEST_CASE("source reloads report parse and hook errors", "[reload]") {
    Engine engine;
    auto bad = reload(engine, ".hook tuner\n    frobnicate r0\n    exit\n");
    CHECK(bad.outcome == ReloadOutcome::LOAD_ERROR);
    CHECK_FALSE(bad.error.empty());
    CHECK_FALSE(bad.verdict);

    auto wrong = reload(engine, read_text("policies/latency_profiler.cclpol"), HookKind::TUNER);
    CHECK(wrong.outcome == ReloadOutcome::LOAD_ERROR);
    CHECK(engine.slot(HookKind::PROFILER).generation() == 0);

    CHECK(reload(engine, read_text("corpus/safe/noop.cclpol"), HookKind::TUNER).ok());
}

TEST_CASE("conflicting map descriptors are rejected", "[reload]") {
    Engine engine;
    REQUIRE(reload(engine, load("corpus/safe/record_latency.cclpol")).ok());
    const auto r = reload(engine, ".name clash\n.hook tuner\n.map latency_map hash key=4 value=8 entries=16\n"
                                  "    ld_map r1, latency_map\n    mov r0, 0\n    exit\n");
    CHECK(r.outcome == ReloadOutcome::REJECTED);
    CHECK_THAT(r.error, Catch::Matchers::ContainsSubstring("latency_map"));
    CHECK(engine.slot(HookKind::TUNER).generation() == 0);
}

TEST_CASE("concurrent reloaders get BUSY", "[reload]") {
    Engine engine;
    std::unique_lock lock(engine.reload_mutex());
    const auto r = reload(engine, load("corpus/safe/noop.cclpol"));
    CHECK(r.outcome == ReloadOutcome::BUSY);
    lock.unlock();
    CHECK(reload(engine, load("corpus/safe/noop.cclpol")).ok());
}

TEST_CASE("swap waits for readers of the old generation", "[reload][drain]") {
    Engine engine;
    REQUIRE(reload(engine, load("corpus/safe/size_aware_v2.cclpol")).ok());
    std::promise<void> held, release;
    auto reader = std::async(std::launch::async, [&] {
        auto guard = engine.slot(HookKind::TUNER).acquire();
        const auto gen = guard.generation().number;
        held.set_value();
        release.get_future().wait();
        // The old program must still be runnable here.
        auto ctx = ContextBuffer{};
        ctx.size = tuner_ctx::SIZE;
        ctx.put<std::uint64_t>(tuner_ctx::MSG_SIZE, 1 << 20);
        execute(*guard.program(), ctx.span(), {ExecMode::CHECKED, nullptr});
        return std::pair{gen, ctx.get<std::uint32_t>(tuner_ctx::ALGORITHM)};
    });
    held.get_future().wait();

    std::atomic<bool> swapped{false};
    auto writer = std::async(std::launch::async, [&] {
        auto r = reload(engine, load("corpus/safe/noop.cclpol"));
        swapped = true;
        return r;
    });
    std::this_thread::sleep_for(50ms);
    CHECK_FALSE(swapped.load());
    // New callers already see the new generation.
    CHECK(engine.invoke_tuner(1, Collective::ALLREDUCE, 1 << 20, 8).generation == 2);
    release.set_value();
    const auto [gen, algo] = reader.get();
    const auto r = writer.get();
    CHECK(gen == 1);
    CHECK(algo == static_cast<std::uint32_t>(Algorithm::RING));
    CHECK(r.ok());
    CHECK(r.drain_us >= 40'000);
    CHECK(engine.slot(HookKind::TUNER).unsafe_reclaims() == 0);
}

TEST_CASE("measure_swap reports one generation per iteration", "[reload]") {
    Engine engine;
    const auto stats = measure_swap(engine, load("corpus/safe/size_aware_v2.cclpol"), 100, true);
    CHECK(stats.iterations == 100);
    CHECK(stats.generation_delta == 100);
    CHECK(stats.swap_us_p50 <= stats.swap_us_p99);
    CHECK(stats.swap_us_p50 / 1000.0 <= stats.total_reload_ms_p50);
    CHECK(stats.verify_ms_p50 <= stats.total_reload_ms_p50);
}

TEST_CASE("small reload stress run loses nothing", "[reload][stress]") {
    StressConfig cfg;
    cfg.calls = 20'000;
    cfg.swaps = 50;
    cfg.threads = 2;
    const auto rep = reload_stress(cfg, {load("corpus/safe/noop.cclpol"), reference_noop},
                                   {load("corpus/safe/size_aware_v2.cclpol"), reference_size_aware_v2},
                                   load("corpus/unsafe/null_deref.cclpol"));
    CHECK(rep.ok());
    CHECK(rep.calls_completed == 20'000);
    CHECK(rep.lost == 0);
    CHECK(rep.invalid_decisions == 0);
    CHECK(rep.monotonicity_violations == 0);
    CHECK(rep.swaps == 50);
    CHECK(rep.generation_end - rep.generation_start == 50);
    CHECK(rep.reject_attempted);
    CHECK(rep.reject_preserved);
    CHECK(rep.distinct_generations_observed >= 2);
}

TEST_CASE("stress oracle mismatch is detected", "[reload][stress]") {
    // Swapping in a program whose oracle is wrong must surface as invalid.
    StressConfig cfg;
    cfg.calls = 5'000;
    cfg.swaps = 10;
    cfg.threads = 1;
    cfg.inject_reject = false;
    const auto rep = reload_stress(cfg, {load("corpus/safe/noop.cclpol"), reference_noop},
                                   {load("corpus/safe/size_aware_v2.cclpol"), reference_noop},
                                   load("corpus/unsafe/null_deref.cclpol"));
    CHECK(rep.invalid_decisions > 0);
    CHECK_FALSE(rep.ok());
}
