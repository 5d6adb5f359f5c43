// Copyright (c) cclpol contributors.
// SPDX-License-Identifier: Apache-2.0
#include "cclpol/scenario.hpp"

#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <charconv>
#include <fstream>
#include <nlohmann/json.hpp>
#include <ostream>
#include <sstream>

#include "cclpol/corpus.hpp"

namespace cclpol {

namespace {

std::uint64_t parse_size(const YAML::Node& node) {
    const auto text = node.as<std::string>();
    std::uint64_t value = 0;
    const char* end = text.data() + text.size();
    auto [ptr, ec] = std::from_chars(text.data(), end, value);
    if (ec != std::errc{} || ptr == text.data()) throw ScenarioError("bad size '" + text + "'");
    std::string_view unit(ptr, static_cast<std::size_t>(end - ptr));
    while (!unit.empty() && unit.front() == ' ') unit.remove_prefix(1);
    std::uint64_t scale = 1;
    if (unit == "KiB") scale = 1ull << 10;
    else if (unit == "MiB") scale = 1ull << 20;
    else if (unit == "GiB") scale = 1ull << 30;
    else if (!unit.empty() && unit != "B") throw ScenarioError("bad size unit in '" + text + "'");
    return value * scale;
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
    std::filesystem::path path(p);
    return path.is_absolute() || base.empty() ? path : base / path;
}

template <typename T>
T get_or(const YAML::Node& root, const char* key, T fallback) {
    const auto n = root[key];
    return n ? n.as<T>() : fallback;
}

} // namespace

double ScenarioSpec::multiplier_at(std::uint64_t call) const {
    double m = 1.0;
    for (const auto& w : contention) {
        if (call >= w.begin && call < w.end) m *= w.multiplier;
    }
    return m;
}

ScenarioSpec parse_scenario(std::string_view yaml_text, const std::filesystem::path& base_dir) {
    ScenarioSpec spec;
    try {
        const YAML::Node root = YAML::Load(std::string(yaml_text));
        if (!root || root.IsNull()) throw ScenarioError("empty scenario");
        if (!root.IsMap()) throw ScenarioError("scenario must be a mapping");
        for (const auto& kv : root) {
            static const char* known[] = {"name",     "calls",      "ranks",    "collective", "comm_handle",
                                          "sizes",    "contention", "programs", "reloads",    "model",
                                          "max_channels"};
            const auto key = kv.first.as<std::string>();
            if (std::find(std::begin(known), std::end(known), key) == std::end(known)) {
                throw ScenarioError("unknown key '" + key + "'");
            }
        }
        spec.name = get_or<std::string>(root, "name", spec.name);
        spec.calls = get_or<std::uint64_t>(root, "calls", 0);
        spec.ranks = get_or<std::uint32_t>(root, "ranks", spec.ranks);
        spec.comm_handle = get_or<std::uint64_t>(root, "comm_handle", spec.comm_handle);
        spec.max_channels = get_or<std::uint32_t>(root, "max_channels", 0);
        if (spec.ranks < 1) throw ScenarioError("ranks must be >= 1");
        if (auto c = root["collective"]) {
            if (!parse_collective(c.as<std::string>(), spec.collective)) {
                throw ScenarioError("unknown collective '" + c.as<std::string>() + "'");
            }
        }
        if (auto s = root["sizes"]) {
            if (s.IsSequence()) {
                for (const auto& item : s) spec.sizes.push_back(parse_size(item));
            } else {
                spec.sizes.push_back(parse_size(s));
            }
        }
        if (spec.calls > 0 && spec.sizes.empty()) throw ScenarioError("sizes required when calls > 0");
        for (const auto& w : root["contention"]) {
            ContentionWindow cw{w["begin"].as<std::uint64_t>(), w["end"].as<std::uint64_t>(),
                                w["multiplier"].as<double>()};
            if (cw.end < cw.begin || !(cw.multiplier > 0)) throw ScenarioError("bad contention window");
            spec.contention.push_back(cw);
        }
        for (const auto& p : root["programs"]) spec.programs.push_back(resolve(base_dir, p.as<std::string>()));
        for (const auto& r : root["reloads"]) {
            spec.reloads.push_back({r["at"].as<std::uint64_t>(), resolve(base_dir, r["program"].as<std::string>())});
        }
        std::sort(spec.reloads.begin(), spec.reloads.end(),
                  [](const auto& a, const auto& b) { return a.at_call < b.at_call; });
        if (auto m = root["model"]) spec.model = resolve(base_dir, m.as<std::string>());
    } catch (const YAML::Exception& e) {
        throw ScenarioError(std::string("scenario: ") + e.what());
    }
    return spec;
}

ScenarioSpec load_scenario(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ScenarioError("cannot read " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_scenario(ss.str(), path.parent_path());
}

std::string trace_line(std::uint64_t call_idx, const CollectiveResult& r) {
    nlohmann::ordered_json j;
    j["call_idx"] = call_idx;
    j["comm_id"] = r.comm_id;
    j["collective"] = to_string(r.collective);
    j["msg_size"] = r.msg_size;
    j["algo"] = to_string(r.decision.algorithm);
    j["proto"] = to_string(r.decision.protocol);
    j["channels"] = r.decision.n_channels;
    j["bus_gbps"] = r.bus_gbps;
    j["latency_ns"] = r.latency_ns;
    j["policy_name"] = r.policy_name;
    return j.dump();
}

namespace {

ReloadReport load_into(Engine& engine, const std::filesystem::path& path) {
    Program program;
    try {
        program = load_program(path);
    } catch (const std::exception& e) {
        throw ScenarioError("program " + path.string() + ": " + e.what());
    }
    auto r = reload(engine, program);
    if (!r.ok()) {
        const auto why = r.verdict && !r.verdict->accepted ? explain(*r.verdict) : r.error;
        throw ScenarioError("program " + path.string() + " not loaded (" + std::string(to_string(r.outcome)) +
                            "): " + why);
    }
    return r;
}

} // namespace

ScenarioResult run_scenario(Engine& engine, const ScenarioSpec& spec, std::ostream* trace) {
    ScenarioResult result;
    for (const auto& p : spec.programs) result.reloads.push_back(load_into(engine, p));
    result.calls.reserve(spec.calls);
    std::size_t next_reload = 0;
    for (std::uint64_t i = 0; i < spec.calls; ++i) {
        while (next_reload < spec.reloads.size() && spec.reloads[next_reload].at_call <= i) {
            result.reloads.push_back(load_into(engine, spec.reloads[next_reload].program));
            ++next_reload;
        }
        const auto size = spec.sizes[i % spec.sizes.size()];
        auto r = engine.run_collective(spec.comm_handle, spec.collective, size, spec.ranks, spec.multiplier_at(i));
        if (trace) *trace << trace_line(i, r) << '\n';
        result.calls.push_back(std::move(r));
    }
    return result;
}

ScenarioResult run_scenario(const ScenarioSpec& spec, std::ostream* trace) {
    EngineOptions options;
    if (spec.model) options.model = load_model(*spec.model);
    options.max_channels = spec.max_channels;
    Engine engine(std::move(options));
    return run_scenario(engine, spec, trace);
}

} // namespace cclpol
