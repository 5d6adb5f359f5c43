// Copyright (c) cclpol contributors.
// SPDX-License-Identifier: Apache-2.0
#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "cclpol/assembler.hpp"
#include "cclpol/bench.hpp"
#include "cclpol/corpus.hpp"
#include "cclpol/reload.hpp"
#include "cclpol/scenario.hpp"
#include "cclpol/sweep.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;
using namespace cclpol;

namespace {

enum Exit : int { OK = 0, USAGE = 1, PARSE = 2, REJECT = 3, RUNTIME = 4 };

struct Failure {
    int code;
    std::string message;
};

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Failure{RUNTIME, "error: cannot read " + path.string()};
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

Program parse_file(const fs::path& path) {
    const auto text = read_file(path);
    try {
        return assemble(text);
    } catch (const ParseError& e) {
        throw Failure{PARSE, path.string() + ":" + e.what()};
    }
}

// Verified program or a REJECT failure carrying the explain text.
Program verified_file(const fs::path& path) {
    auto program = parse_file(path);
    auto verdict = verify(program);
    if (!verdict.accepted) throw Failure{REJECT, explain(verdict)};
    return program;
}

PerfModel resolve_model(const std::string& arg) {
    std::string path = arg;
    if (path.empty()) {
        if (const char* env = std::getenv("CCLPOL_MODEL"); env && *env) path = env;
    }
    if (path.empty()) return PerfModel::builtin();
    if (!fs::exists(path) && fs::exists(path + ".yaml")) path += ".yaml";
    if (!fs::exists(path)) throw Failure{RUNTIME, "error: model file not found: " + path};
    try {
        return load_model(path);
    } catch (const ConfigError& e) {
        throw Failure{PARSE, std::string("error: ") + e.what()};
    }
}

std::string decision_text(const Decision& d) {
    if (d.deferred) return "default";
    return std::string(to_string(d.algorithm)) + "/" + std::string(to_string(d.protocol));
}

std::string size_text(std::uint64_t bytes) {
    char buf[32];
    if (bytes >= (1ull << 30) && bytes % (1ull << 30) == 0) {
        std::snprintf(buf, sizeof buf, "%llu GiB", static_cast<unsigned long long>(bytes >> 30));
    } else if (bytes >= (1ull << 20) && bytes % (1ull << 20) == 0) {
        std::snprintf(buf, sizeof buf, "%llu MiB", static_cast<unsigned long long>(bytes >> 20));
    } else if (bytes >= 1024 && bytes % 1024 == 0) {
        std::snprintf(buf, sizeof buf, "%llu KiB", static_cast<unsigned long long>(bytes >> 10));
    } else {
        std::snprintf(buf, sizeof buf, "%llu B", static_cast<unsigned long long>(bytes));
    }
    return buf;
}

ordered_json verdict_json(const Verdict& v) {
    ordered_json j;
    j["accepted"] = v.accepted;
    j["class"] = v.rejection_class ? std::string(to_string(*v.rejection_class)) : "";
    j["message"] = v.message;
    j["insn"] = v.insn;
    j["registers"] = v.registers;
    j["analyzed_insns"] = v.analyzed_insns;
    return j;
}

int cmd_verify(const fs::path& file, bool json) {
    const auto program = parse_file(file);
    const auto verdict = verify(program);
    if (json) {
        auto j = verdict_json(verdict);
        j["file"] = file.string();
        std::cout << j.dump() << '\n';
    } else {
        std::cout << explain(verdict) << '\n';
    }
    return verdict.accepted ? OK : REJECT;
}

int cmd_explain(const fs::path& file) {
    const auto program = parse_file(file);
    const auto verdict = verify(program);
    std::cout << explain(verdict) << '\n';
    if (!verdict.accepted && verdict.insn >= 0 &&
        static_cast<std::size_t>(verdict.insn) < program.instructions.size()) {
        std::cout << "\n";
        const int lo = std::max(0, verdict.insn - 3);
        for (int i = lo; i <= verdict.insn; ++i) {
            std::printf("%s %4d: %s\n", i == verdict.insn ? ">" : " ", i,
                        format_instruction(program.instructions[static_cast<std::size_t>(i)], &program).c_str());
        }
    }
    return verdict.accepted ? OK : REJECT;
}

int cmd_run(const fs::path& file, const std::string& ctx_hex, bool dump_maps, bool checked, bool json) {
    const auto program = verified_file(file);
    std::vector<std::uint8_t> bytes;
    try {
        bytes = from_hex(ctx_hex);
    } catch (const std::invalid_argument& e) {
        throw Failure{PARSE, std::string("error: --ctx: ") + e.what()};
    }
    const auto layout = layout_for(program.hook);
    if (bytes.size() > layout.size) {
        throw Failure{USAGE, "error: --ctx has " + std::to_string(bytes.size()) + " bytes, hook " +
                                 std::string(to_string(program.hook)) + " context is " + std::to_string(layout.size)};
    }
    ContextBuffer ctx;
    ctx.size = layout.size;
    std::copy(bytes.begin(), bytes.end(), ctx.bytes.begin());

    MapRegistry registry;
    const auto prepared = prepare(program, registry);
    TraceRing trace;
    std::int64_t r0 = 0;
    try {
        r0 = execute(*prepared, ctx.span(), {checked ? ExecMode::CHECKED : ExecMode::FAST, &trace});
    } catch (const SafetyFault& f) {
        throw Failure{RUNTIME, std::string("error: ") + f.what()};
    }
    const auto out_hex = to_hex(ctx.span());
    if (json) {
        ordered_json j;
        j["r0"] = r0;
        j["ctx"] = out_hex;
        if (dump_maps) {
            ordered_json maps = ordered_json::object();
            for (const auto& name : registry.names()) {
                ordered_json entries = ordered_json::array();
                for (const auto& [k, v] : registry.find(name)->entries()) {
                    entries.push_back({{"key", to_hex(k)}, {"value", to_hex(v)}});
                }
                maps[name] = entries;
            }
            j["maps"] = maps;
        }
        std::cout << j.dump() << '\n';
    } else {
        std::cout << "r0 = " << r0 << "\nctx = " << out_hex << '\n';
        if (dump_maps) std::cout << registry.dump();
    }
    return OK;
}

int cmd_bench(const std::string& suite, std::uint64_t calls, std::uint64_t warmup, bool json) {
    if (suite != "table1") throw Failure{USAGE, "error: unknown suite '" + suite + "' (available: table1)"};
    BenchOptions options;
    options.calls = calls;
    options.warmup = warmup;
    const auto policies = ladder_policies(default_data_dir());
    LadderReport report;
    try {
        report = run_ladder(policies, options);
    } catch (const std::invalid_argument& e) {
        throw Failure{RUNTIME, std::string("error: ") + e.what()};
    }
    if (!report.fit) throw Failure{RUNTIME, "error: ladder too short for an overhead fit"};
    const double base = report.native.p50_ns;
    if (json) {
        auto row = [&](const BenchResult& r) {
            ordered_json j;
            j["policy"] = r.policy_name;
            j["calls"] = r.calls;
            j["p50_ns"] = r.p50_ns;
            j["p99_ns"] = r.p99_ns;
            j["mean_ns"] = r.mean_ns;
            j["delta_p50_ns"] = r.p50_ns - base;
            j["n_lookup"] = r.n_lookup;
            j["n_update"] = r.n_update;
            return j;
        };
        std::cout << row(report.native).dump() << '\n';
        for (const auto& r : report.policies) std::cout << row(r).dump() << '\n';
        ordered_json fit;
        fit["fit"] = "overhead";
        fit["base_ns"] = report.fit->base_ns;
        fit["per_lookup_ns"] = report.fit->per_lookup_ns;
        fit["per_update_ns"] = report.fit->per_update_ns;
        fit["r_squared"] = report.fit->r_squared;
        fit["residual_rms_ns"] = report.fit->residual_rms_ns;
        std::cout << fit.dump() << '\n';
        return OK;
    }
    std::printf("%-20s %10s %10s %10s %8s %8s\n", "Policy", "P50 (ns)", "P99 (ns)", "dP50", "lookups", "updates");
    std::printf("%-20s %10.0f %10.0f %10s %8s %8s\n", "native", report.native.p50_ns, report.native.p99_ns, "-", "-", "-");
    for (const auto& r : report.policies) {
        std::printf("%-20s %10.0f %10.0f %+10.0f %8zu %8zu\n", r.policy_name.c_str(), r.p50_ns, r.p99_ns,
                    r.p50_ns - base, r.n_lookup, r.n_update);
    }
    std::printf("\nfit: dP50 ~= %.1f + %.1f*n_lookup + %.1f*n_update ns  (R^2 = %.3f, %llu calls/policy)\n",
                report.fit->base_ns, report.fit->per_lookup_ns, report.fit->per_update_ns, report.fit->r_squared,
                static_cast<unsigned long long>(calls));
    return OK;
}

int cmd_sweep(const std::string& model_arg, const std::string& policy_arg, bool json) {
    const auto model = resolve_model(model_arg);
    std::optional<Program> policy;
    if (!policy_arg.empty()) {
        policy = verified_file(policy_arg);
        if (policy->hook != HookKind::TUNER) throw Failure{USAGE, "error: --policy must be a tuner program"};
    }
    const auto rows = run_sweep(model, policy ? &*policy : nullptr);
    const std::string pname = policy ? policy->name : "none";
    if (json) {
        for (const auto& r : rows) {
            ordered_json j;
            j["msg_size"] = r.msg_size;
            j["default_gbps"] = r.default_gbps;
            j["ring_gbps"] = r.ring_gbps;
            j["ring_delta_pct"] = r.ring_delta_pct;
            j["policy"] = pname;
            j["policy_decision"] = decision_text(r.policy_decision);
            j["policy_channels"] = r.policy_decision.n_channels;
            j["policy_gbps"] = r.policy_gbps;
            j["policy_delta_pct"] = r.policy_delta_pct;
            std::cout << j.dump() << '\n';
        }
        return OK;
    }
    std::printf("model: %s, 8-rank allreduce bus bandwidth (GB/s)\n", model.name.c_str());
    std::printf("%-9s %14s %8s %8s   %-22s %8s %8s\n", "Size", "Default(NVLS)", "Ring", "Delta", ("policy " + pname).c_str(),
                "GB/s", "Delta");
    for (const auto& r : rows) {
        std::printf("%-9s %14.1f %8.1f %+7.1f%%   %-22s %8.1f %+7.1f%%\n", size_text(r.msg_size).c_str(), r.default_gbps,
                    r.ring_gbps, r.ring_delta_pct,
                    (decision_text(r.policy_decision) + " x" + std::to_string(r.policy_decision.n_channels)).c_str(),
                    r.policy_gbps, r.policy_delta_pct);
    }
    return OK;
}

struct Phase {
    std::uint64_t begin, end;
    double multiplier;
};

int cmd_scenario(const fs::path& spec_path, const std::string& trace_path, const std::vector<std::string>& reloads,
                 bool json) {
    if (!fs::exists(spec_path)) throw Failure{RUNTIME, "error: cannot read " + spec_path.string()};
    ScenarioSpec spec;
    try {
        spec = load_scenario(spec_path);
    } catch (const ScenarioError& e) {
        throw Failure{PARSE, std::string("error: ") + e.what()};
    }
    for (const auto& r : reloads) {
        const auto colon = r.find(':');
        std::uint64_t at = 0;
        try {
            if (colon == std::string::npos) throw std::invalid_argument(r);
            at = std::stoull(r.substr(0, colon));
        } catch (const std::exception&) {
            throw Failure{USAGE, "error: --reload expects CALL:FILE, got '" + r + "'"};
        }
        spec.reloads.push_back({at, r.substr(colon + 1)});
    }
    std::sort(spec.reloads.begin(), spec.reloads.end(),
              [](const auto& a, const auto& b) { return a.at_call < b.at_call; });

    std::ofstream trace;
    if (!trace_path.empty()) {
        trace.open(trace_path);
        if (!trace) throw Failure{RUNTIME, "error: cannot write " + trace_path};
    }
    ScenarioResult result;
    try {
        result = run_scenario(spec, trace_path.empty() ? nullptr : &trace);
    } catch (const ScenarioError& e) {
        throw Failure{RUNTIME, std::string("error: ") + e.what()};
    } catch (const ConfigError& e) {
        throw Failure{PARSE, std::string("error: ") + e.what()};
    }

    // Phase boundaries at every contention window edge.
    std::vector<std::uint64_t> cuts = {0, spec.calls};
    for (const auto& w : spec.contention) {
        cuts.push_back(std::min(w.begin, spec.calls));
        cuts.push_back(std::min(w.end, spec.calls));
    }
    std::sort(cuts.begin(), cuts.end());
    cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());

    if (!json) {
        std::printf("scenario %s: %llu calls, %zu program loads\n", spec.name.c_str(),
                    static_cast<unsigned long long>(spec.calls), result.reloads.size());
    }
    for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
        const auto b = cuts[i], e = cuts[i + 1];
        std::uint32_t lo = ~0u, hi = 0;
        std::uint64_t reach_hi = b;
        for (auto k = b; k < e; ++k) {
            const auto c = result.calls[k].decision.n_channels;
            lo = std::min(lo, c);
            if (c > hi) {
                hi = c;
                reach_hi = k;
            }
        }
        const auto first = result.calls[b].decision.n_channels;
        const auto last = result.calls[e - 1].decision.n_channels;
        if (json) {
            ordered_json j;
            j["phase_begin"] = b;
            j["phase_end"] = e;
            j["multiplier"] = spec.multiplier_at(b);
            j["first_channels"] = first;
            j["min_channels"] = lo;
            j["max_channels"] = hi;
            j["last_channels"] = last;
            j["max_reached_at"] = reach_hi;
            std::cout << j.dump() << '\n';
        } else {
            std::printf("  calls [%llu, %llu) x%.0f: channels first=%u min=%u max=%u (at %llu) last=%u\n",
                        static_cast<unsigned long long>(b), static_cast<unsigned long long>(e), spec.multiplier_at(b),
                        first, lo, hi, static_cast<unsigned long long>(reach_hi), last);
        }
    }
    if (!trace_path.empty() && !json) std::printf("trace: %s\n", trace_path.c_str());
    return OK;
}

int cmd_reload_test(std::uint64_t calls, std::uint64_t swaps, unsigned threads, bool json) {
    if (threads == 0) throw Failure{USAGE, "error: --threads must be >= 1"};
    const auto root = default_data_dir();
    StressConfig config{calls, swaps, threads, true};
    StressReport r;
    try {
        r = reload_stress(config, {load_program(root / "corpus/safe/noop.cclpol"), reference_noop},
                          {load_program(root / "corpus/safe/size_aware_v2.cclpol"), reference_size_aware_v2},
                          load_program(root / "corpus/unsafe/null_deref.cclpol"));
    } catch (const std::exception& e) {
        throw Failure{RUNTIME, std::string("error: ") + e.what()};
    }
    if (json) {
        ordered_json j;
        j["calls"] = r.calls_issued;
        j["completed"] = r.calls_completed;
        j["lost"] = r.lost;
        j["invalid_decisions"] = r.invalid_decisions;
        j["monotonicity_violations"] = r.monotonicity_violations;
        j["swaps"] = r.swaps;
        j["generation_start"] = r.generation_start;
        j["generation_end"] = r.generation_end;
        j["generations_observed"] = r.distinct_generations_observed;
        j["reject_preserved"] = r.reject_preserved;
        j["unsafe_reclaims"] = r.unsafe_reclaims;
        j["swap_us_p50"] = r.swap_us_p50;
        j["swap_us_p99"] = r.swap_us_p99;
        j["seconds"] = r.seconds;
        j["ok"] = r.ok();
        std::cout << j.dump() << '\n';
    } else {
        std::printf("reload-test: %u invoker threads, %llu calls, %llu swaps (noop <-> size_aware_v2)\n", threads,
                    static_cast<unsigned long long>(r.calls_issued), static_cast<unsigned long long>(r.swaps));
        std::printf("  completed calls        %llu\n", static_cast<unsigned long long>(r.calls_completed));
        std::printf("  lost invocations       %llu\n", static_cast<unsigned long long>(r.lost));
        std::printf("  invalid decisions      %llu\n", static_cast<unsigned long long>(r.invalid_decisions));
        std::printf("  monotonicity breaks    %llu\n", static_cast<unsigned long long>(r.monotonicity_violations));
        std::printf("  generations            %llu -> %llu (%llu observed)\n",
                    static_cast<unsigned long long>(r.generation_start), static_cast<unsigned long long>(r.generation_end),
                    static_cast<unsigned long long>(r.distinct_generations_observed));
        std::printf("  rejected reload        %s\n", !r.reject_attempted ? "not attempted"
                                                    : r.reject_preserved ? "REJECTED, behavior unchanged"
                                                                         : "FAILED");
        std::printf("  unsafe reclaims        %llu\n", static_cast<unsigned long long>(r.unsafe_reclaims));
        std::printf("  swap window            p50 %.2f us, p99 %.2f us\n", r.swap_us_p50, r.swap_us_p99);
        std::printf("  elapsed                %.2f s\n", r.seconds);
        std::printf("%s\n", r.ok() ? "zero-loss: PASS" : "zero-loss: FAIL");
    }
    return r.ok() ? OK : RUNTIME;
}

int cmd_corpus(const std::string& dir_arg, std::uint64_t trials, bool json) {
    const fs::path dir = dir_arg.empty() ? default_data_dir() / "corpus" : fs::path(dir_arg);
    CorpusReport report;
    try {
        report = run_corpus(dir, {}, trials);
    } catch (const std::exception& e) {
        throw Failure{RUNTIME, std::string("error: ") + e.what()};
    }
    for (const auto& r : report.results) {
        const std::string expected = r.entry.expected ? std::string(to_string(*r.entry.expected)) : "ACCEPT";
        const std::string got = !r.error.empty()      ? "ERROR"
                                : r.verdict.accepted ? "ACCEPT"
                                                     : std::string(to_string(*r.verdict.rejection_class));
        if (json) {
            ordered_json j;
            j["path"] = r.entry.path;
            j["expected"] = expected;
            j["got"] = got;
            j["match"] = r.match;
            if (r.fuzz) {
                j["fuzz_trials"] = r.fuzz->trials;
                j["fuzz_faults"] = r.fuzz->faults;
            }
            if (!r.error.empty()) j["error"] = r.error;
            std::cout << j.dump() << '\n';
        } else {
            std::printf("%-5s %-34s expected %-18s got %-18s", r.match ? "ok" : "FAIL", r.entry.path.c_str(),
                        expected.c_str(), got.c_str());
            if (r.fuzz) {
                std::printf(" fuzz %llu/%llu clean", static_cast<unsigned long long>(r.fuzz->trials - r.fuzz->faults),
                            static_cast<unsigned long long>(r.fuzz->trials));
            }
            if (!r.error.empty()) std::printf(" (%s)", r.error.c_str());
            std::printf("\n");
        }
    }
    const auto matched = report.results.size() - report.mismatches;
    if (json) {
        ordered_json j;
        j["matched"] = matched;
        j["total"] = report.results.size();
        j["safe_accepted"] = report.safe_accepted;
        j["safe_total"] = report.safe_total;
        j["unsafe_rejected"] = report.unsafe_rejected;
        j["unsafe_total"] = report.unsafe_total;
        j["fuzz_faults"] = report.fuzz_faults;
        j["seconds"] = report.seconds;
        std::cout << j.dump() << '\n';
    } else {
        std::printf("%zu/%zu verdicts match: safe %zu/%zu accepted, unsafe %zu/%zu rejected; "
                    "%llu checked executions, %llu faults (%.2f s)\n",
                    matched, report.results.size(), report.safe_accepted, report.safe_total, report.unsafe_rejected,
                    report.unsafe_total, static_cast<unsigned long long>(report.fuzz_trials),
                    static_cast<unsigned long long>(report.fuzz_faults), report.seconds);
    }
    if (report.mismatches) return REJECT;
    return report.ok() ? OK : RUNTIME;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"cclpol: verified policy programs for a simulated collective library"};
    app.require_subcommand(1);
    bool json = false;
    app.add_flag("--json", json, "JSON-lines output");

    std::string file, ctx_hex, suite = "table1", model, policy, trace, dir;
    std::vector<std::string> reloads;
    bool dump_maps = false, checked = false;
    std::uint64_t calls = 0, warmup = 10'000, swaps = 1000, trials = 10'000;
    unsigned threads = 4;

    auto* verify_cmd = app.add_subcommand("verify", "verify a program and print the verdict");
    verify_cmd->add_option("file", file, "program source")->required();

    auto* explain_cmd = app.add_subcommand("explain", "print verifier diagnostics with the offending code");
    explain_cmd->add_option("file", file, "program source")->required();

    auto* run_cmd = app.add_subcommand("run", "execute one invocation on a context");
    run_cmd->add_option("file", file, "program source")->required();
    run_cmd->add_option("--ctx", ctx_hex, "context bytes as hex")->required();
    run_cmd->add_flag("--dump-maps", dump_maps, "print map contents afterwards");
    run_cmd->add_flag("--checked", checked, "run in checked mode");

    auto* bench_cmd = app.add_subcommand("bench", "per-invocation latency ladder");
    bench_cmd->add_option("--suite", suite, "benchmark suite")->capture_default_str();
    bench_cmd->add_option("--calls", calls, "timed calls per policy")->default_val(1'000'000);
    bench_cmd->add_option("--warmup", warmup, "untimed calls per policy")->capture_default_str();

    auto* sweep_cmd = app.add_subcommand("sweep", "size sweep: default vs Ring vs policy");
    sweep_cmd->add_option("--model", model, "model config (default: $CCLPOL_MODEL or builtin)");
    sweep_cmd->add_option("--policy", policy, "tuner program");

    auto* scenario_cmd = app.add_subcommand("scenario", "run a closed-loop scenario");
    scenario_cmd->add_option("spec", file, "scenario file")->required();
    scenario_cmd->add_option("--trace", trace, "write the per-call JSON-lines trace here");
    scenario_cmd->add_option("--reload", reloads, "CALL:FILE, load FILE before call CALL");

    auto* reload_cmd = app.add_subcommand("reload-test", "hot-reload zero-loss stress test");
    reload_cmd->add_option("--calls", calls, "total invocations")->default_val(400'000);
    reload_cmd->add_option("--swaps", swaps, "program swaps")->capture_default_str();
    reload_cmd->add_option("--threads", threads, "invoker threads")->capture_default_str();

    auto* corpus_cmd = app.add_subcommand("corpus", "verify and fuzz the verification corpus");
    corpus_cmd->add_option("--dir", dir, "corpus directory (default: shipped corpus)");
    corpus_cmd->add_option("--trials", trials, "checked executions per accepted program")->capture_default_str();

    for (auto* sub : app.get_subcommands({})) sub->add_flag("--json", json, "JSON-lines output");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return USAGE;
    }

    try {
        if (*verify_cmd) return cmd_verify(file, json);
        if (*explain_cmd) return cmd_explain(file);
        if (*run_cmd) return cmd_run(file, ctx_hex, dump_maps, checked, json);
        if (*bench_cmd) return cmd_bench(suite, calls, warmup, json);
        if (*sweep_cmd) return cmd_sweep(model, policy, json);
        if (*scenario_cmd) return cmd_scenario(file, trace, reloads, json);
        if (*reload_cmd) return cmd_reload_test(calls, swaps, threads, json);
        if (*corpus_cmd) return cmd_corpus(dir, trials, json);
    } catch (const Failure& f) {
        std::cerr << f.message << '\n';
        return f.code;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return RUNTIME;
    }
    return USAGE;
}
