// Copyright (c) cclpol contributors.
// SPDX-License-Identifier: Apache-2.0
#include "cclpol/corpus.hpp"

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "cclpol/assembler.hpp"

#ifndef CCLPOL_DATA_DIR
#define CCLPOL_DATA_DIR "."
#endif

namespace cclpol {

std::filesystem::path default_data_dir() {
    if (const char* home = std::getenv("CCLPOL_HOME"); home && *home) return home;
    return CCLPOL_DATA_DIR;
}

Program load_program(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return assemble(ss.str());
}

std::vector<CorpusEntry> parse_manifest(std::string_view text) {
    std::vector<CorpusEntry> out;
    std::istringstream in{std::string(text)};
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos || line[first] == '#') continue;
        std::istringstream fields(line);
        CorpusEntry e;
        std::string expected, hook;
        if (!(fields >> e.path >> expected >> hook)) {
            throw std::invalid_argument("manifest line " + std::to_string(lineno) + ": expected path, verdict, hook");
        }
        if (expected != "ACCEPT") {
            e.expected = parse_rejection_class(expected);
            if (!e.expected) {
                throw std::invalid_argument("manifest line " + std::to_string(lineno) + ": unknown verdict '" +
                                            expected + "'");
            }
        }
        const auto h = parse_hook(hook);
        if (!h) throw std::invalid_argument("manifest line " + std::to_string(lineno) + ": unknown hook '" + hook + "'");
        e.hook = *h;
        std::getline(fields >> std::ws, e.description);
        out.push_back(std::move(e));
    }
    return out;
}

std::vector<CorpusEntry> corpus_manifest(const std::filesystem::path& corpus_dir) {
    std::ifstream in(corpus_dir / "manifest");
    if (!in) throw std::runtime_error("cannot read " + (corpus_dir / "manifest").string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_manifest(ss.str());
}

CorpusReport run_corpus(const std::filesystem::path& corpus_dir, const VerifierConfig& config,
                        std::uint64_t fuzz_trials, std::uint64_t seed) {
    const auto start = std::chrono::steady_clock::now();
    CorpusReport report;
    std::uint64_t index = 0;
    for (auto& entry : corpus_manifest(corpus_dir)) {
        CorpusResult r;
        r.entry = entry;
        (entry.expect_accept() ? report.safe_total : report.unsafe_total) += 1;
        try {
            const auto program = load_program(corpus_dir / entry.path);
            if (program.hook != entry.hook) {
                r.error = "hook mismatch: file declares " + std::string(to_string(program.hook));
            } else {
                r.verdict = verify(program, config);
                if (entry.expect_accept()) {
                    r.match = r.verdict.accepted;
                    if (r.match) ++report.safe_accepted;
                } else {
                    r.match = !r.verdict.accepted && r.verdict.rejection_class == *entry.expected;
                    if (r.match) ++report.unsafe_rejected;
                }
                if (r.verdict.accepted && fuzz_trials > 0) {
                    r.fuzz = execute_checked_fuzz_parallel(program, fuzz_trials, seed + index);
                    report.fuzz_trials += r.fuzz->trials;
                    report.fuzz_faults += r.fuzz->faults;
                }
            }
        } catch (const std::exception& e) {
            r.error = e.what();
        }
        if (!r.match) ++report.mismatches;
        report.results.push_back(std::move(r));
        ++index;
    }
    report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return report;
}

Decision reference_noop(std::uint64_t, std::uint32_t max_channels) {
    return Decision{Algorithm::NVLS, Protocol::SIMPLE, max_channels, true};
}

Decision reference_size_aware_v2(std::uint64_t msg_size, std::uint32_t max_channels) {
    return Decision{msg_size > 32768 ? Algorithm::RING : Algorithm::TREE, Protocol::SIMPLE, max_channels, false};
}

} // namespace cclpol
