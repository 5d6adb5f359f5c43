// Copyright (c) cclpol contributors.
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "cclpol/engine.hpp"
#include "cclpol/reload.hpp"

namespace cclpol {

class ScenarioError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

struct ContentionWindow {
    std::uint64_t begin = 0; // first call index affected
    std::uint64_t end = 0;   // one past the last
    double multiplier = 1.0;
};

struct ScheduledReload {
    std::uint64_t at_call = 0;
    std::filesystem::path program;
};

struct ScenarioSpec {
    std::string name = "scenario";
    std::uint64_t calls = 0;
    std::uint32_t ranks = 8;
    Collective collective = Collective::ALLREDUCE;
    std::uint64_t comm_handle = 1;
    std::uint32_t max_channels = 0;   // 0: model default
    std::vector<std::uint64_t> sizes; // cycled per call
    std::vector<ContentionWindow> contention;
    std::vector<std::filesystem::path> programs;
    std::vector<ScheduledReload> reloads;
    std::optional<std::filesystem::path> model;

    double multiplier_at(std::uint64_t call) const;
};

/// Relative paths resolve against `base_dir`. Throws ScenarioError.
ScenarioSpec parse_scenario(std::string_view yaml_text, const std::filesystem::path& base_dir = {});
ScenarioSpec load_scenario(const std::filesystem::path& path);

struct ScenarioResult {
    std::vector<CollectiveResult> calls;
    std::vector<ReloadReport> reloads;
};

/// Loads the spec's programs into `engine` (any failure is a ScenarioError)
/// and issues the calls in order. With `trace`, writes one JSON line per call.
ScenarioResult run_scenario(Engine& engine, const ScenarioSpec& spec, std::ostream* trace = nullptr);

/// Builds an engine from the spec's model (or the builtin) and runs it.
ScenarioResult run_scenario(const ScenarioSpec& spec, std::ostream* trace = nullptr);

/// {call_idx, comm_id, collective, msg_size, algo, proto, channels,
/// bus_gbps, latency_ns, policy_name}
std::string trace_line(std::uint64_t call_idx, const CollectiveResult& r);

} // namespace cclpol
