// Copyright (c) cclpol contributors.
// SPDX-License-Identifier: Apache-2.0
//
// Serial reference vs OpenMP fuzz kernel on the shipped safe corpus.
#include <benchmark/benchmark.h>
#include <omp.h>

#include <cstdio>
#include <cstdlib>

#include "cclpol/corpus.hpp"
#include "cclpol/vm.hpp"

namespace {

using namespace cclpol;

const std::vector<Program>& safe_programs() {
    static const std::vector<Program> programs = [] {
        std::vector<Program> out;
        const auto dir = default_data_dir() / "corpus";
        for (const auto& e : corpus_manifest(dir)) {
            if (e.expect_accept()) out.push_back(load_program(dir / e.path));
        }
        return out;
    }();
    return programs;
}

template <FuzzResult (*Kernel)(const Program&, std::uint64_t, std::uint64_t)>
void BM_fuzz(benchmark::State& state) {
    const auto trials = static_cast<std::uint64_t>(state.range(0));
    std::uint64_t faults = 0;
    for (auto _ : state) {
        for (const auto& p : safe_programs()) faults += Kernel(p, trials, 7).faults;
    }
    state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * trials * safe_programs().size()));
    state.counters["faults"] = static_cast<double>(faults);
    state.counters["threads"] = Kernel == execute_checked_fuzz ? 1 : omp_get_max_threads();
}

BENCHMARK(BM_fuzz<execute_checked_fuzz>)->Name("fuzz/serial")->Arg(10'000)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_fuzz<execute_checked_fuzz_parallel>)->Name("fuzz/openmp")->Arg(10'000)->Unit(benchmark::kMillisecond);

} // namespace

int main(int argc, char** argv) {
    // Results must match before timing means anything.
    for (const auto& p : safe_programs()) {
        if (!(execute_checked_fuzz(p, 2000, 3) == execute_checked_fuzz_parallel(p, 2000, 3))) {
            std::fprintf(stderr, "serial and OpenMP fuzz results differ for %s\n", p.name.c_str());
            return EXIT_FAILURE;
        }
    }
    benchmark::Initialize(&argc, argv);
    if (benchmark::ReportUnrecognizedArguments(argc, argv)) return EXIT_FAILURE;
    benchmark::RunSpecifiedBenchmarks();
    benchmark::Shutdown();
    return EXIT_SUCCESS;
}
