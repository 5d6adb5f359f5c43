// Copyright (c) cclpol contributors.
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cclpol/engine.hpp"
#include "cclpol/verifier.hpp"
#include "cclpol/vm.hpp"

namespace cclpol {

/// Root holding corpus/, policies/, models/ and scenarios/: $CCLPOL_HOME if
/// set, else the source tree the library was built from.
std::filesystem::path default_data_dir();

/// Reads and assembles a .cclpol file. Throws std::runtime_error when the
/// file cannot be read and ParseError on bad source.
Program load_program(const std::filesystem::path& path);

struct CorpusEntry {
    std::string path; // relative to the corpus directory
    std::optional<RejectionClass> expected; // nullopt: ACCEPT
    HookKind hook = HookKind::TUNER;
    std::string description;

    bool expect_accept() const { return !expected.has_value(); }
};

/// Whitespace-separated columns: path, ACCEPT or a rejection class, hook,
/// free-text description. '#' starts a comment line. Throws
/// std::invalid_argument with the line number on a malformed line.
std::vector<CorpusEntry> parse_manifest(std::string_view text);

/// The shipped manifest from `corpus_dir`/manifest.
std::vector<CorpusEntry> corpus_manifest(const std::filesystem::path& corpus_dir = default_data_dir() / "corpus");

struct CorpusResult {
    CorpusEntry entry;
    Verdict verdict;
    bool match = false;
    std::optional<FuzzResult> fuzz; // accepted programs only
    std::string error;               // load failure
};

struct CorpusReport {
    std::vector<CorpusResult> results;
    std::size_t safe_total = 0;
    std::size_t safe_accepted = 0;
    std::size_t unsafe_total = 0;
    std::size_t unsafe_rejected = 0; // with the designated class
    std::size_t mismatches = 0;
    std::uint64_t fuzz_trials = 0;
    std::uint64_t fuzz_faults = 0;
    double seconds = 0;

    bool ok() const { return mismatches == 0 && fuzz_faults == 0 && !results.empty(); }
};

/// Verifies every manifest entry and fuzzes each accepted program in CHECKED
/// mode for `fuzz_trials` randomized executions.
CorpusReport run_corpus(const std::filesystem::path& corpus_dir, const VerifierConfig& config = {},
                        std::uint64_t fuzz_trials = 10'000, std::uint64_t seed = 0xC0FFEE);

/// Host-side reference decisions for shipped tuner programs.
Decision reference_noop(std::uint64_t msg_size, std::uint32_t max_channels);
Decision reference_size_aware_v2(std::uint64_t msg_size, std::uint32_t max_channels);

} // namespace cclpol
