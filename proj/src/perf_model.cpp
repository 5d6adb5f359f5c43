// Copyright (c) cclpol contributors.
// SPDX-License-Identifier: Apache-2.0
#include "cclpol/perf_model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <optional>
#include <sstream>

#include <yaml-cpp/yaml.h>

namespace cclpol {

namespace {

double interpolate_log2(const std::vector<std::pair<double, double>>& pts, double x) {
    if (x <= pts.front().first) return pts.front().second;
    if (x >= pts.back().first) return pts.back().second;
    auto hi = std::upper_bound(pts.begin(), pts.end(), x, [](double v, const auto& p) { return v < p.first; });
    auto lo = hi - 1;
    const double t = (std::log2(x) - std::log2(lo->first)) / (std::log2(hi->first) - std::log2(lo->first));
    return lo->second + t * (hi->second - lo->second);
}

std::optional<Algorithm> parse_algorithm(const std::string& s) {
    for (int a = 0; a < NUM_ALGORITHMS; ++a) {
        if (to_string(static_cast<Algorithm>(a)) == s) return static_cast<Algorithm>(a);
    }
    return std::nullopt;
}

} // namespace

double PerfModel::channel_curve(std::uint32_t channels) const {
    const double c = std::max<double>(channels, 1.0);
    if (c <= curve_points.front().first) return curve_points.front().second;
    if (c >= curve_points.back().first) return curve_points.back().second;
    auto hi = std::upper_bound(curve_points.begin(), curve_points.end(), c,
                               [](double v, const auto& p) { return v < p.first; });
    auto lo = hi - 1;
    const double t = (std::log2(c) - std::log2(lo->first)) / (std::log2(hi->first) - std::log2(lo->first));
    return std::exp(std::log(lo->second) + t * (std::log(hi->second) - std::log(lo->second)));
}

double PerfModel::anchor_bandwidth(Algorithm algo, std::uint64_t msg_size) const {
    const double mib = static_cast<double>(msg_size) / (1024.0 * 1024.0);
    return interpolate_log2(anchors[static_cast<std::size_t>(algo)], std::max(mib, 1e-12));
}

double PerfModel::protocol_factor(Protocol proto, std::uint64_t msg_size) const {
    if (proto != Protocol::LL) return 1.0;
    return msg_size < ll_threshold_bytes ? ll_small_factor : ll_large_factor;
}

double PerfModel::bus_bandwidth(Algorithm algo, Protocol proto, std::uint32_t channels, std::uint64_t msg_size) const {
    return anchor_bandwidth(algo, msg_size) * protocol_factor(proto, msg_size) * channel_curve(channels);
}

std::string PerfModel::validate() const {
    if (ranks < 2) return "ranks must be at least 2";
    if (max_channels < 1) return "max_channels must be positive";
    for (int a = 0; a < NUM_ALGORITHMS; ++a) {
        const auto& pts = anchors[static_cast<std::size_t>(a)];
        const std::string name(to_string(static_cast<Algorithm>(a)));
        if (pts.empty()) return "no anchors for " + name;
        for (std::size_t i = 0; i < pts.size(); ++i) {
            if (!(pts[i].first > 0) || !(pts[i].second > 0)) return "non-positive anchor for " + name;
            if (i > 0 && !(pts[i].first > pts[i - 1].first)) return "anchors for " + name + " not strictly increasing in size";
        }
    }
    if (curve_points.empty()) return "channel curve has no points";
    for (std::size_t i = 0; i < curve_points.size(); ++i) {
        if (!(curve_points[i].first >= 1) || !(curve_points[i].second > 0)) return "invalid channel curve point";
        if (i > 0 && (!(curve_points[i].first > curve_points[i - 1].first) ||
                       curve_points[i].second < curve_points[i - 1].second)) {
            return "channel curve must be increasing in channels and non-decreasing in efficiency";
        }
    }
    if (channel_curve(max_channels) != 1.0) return "channel curve must reach 1.0 at max_channels";
    if (!(ll_small_factor > 0) || !(ll_large_factor > 0)) return "protocol factors must be positive";
    return {};
}

PerfModel PerfModel::builtin() {
    PerfModel m;
    m.name = "b300_nvlink8";
    auto& nvls = m.anchors[static_cast<std::size_t>(Algorithm::NVLS)];
    auto& ring = m.anchors[static_cast<std::size_t>(Algorithm::RING)];
    auto& tree = m.anchors[static_cast<std::size_t>(Algorithm::TREE)];
    nvls = {{4, 133.5}, {8, 196.3}, {16, 278.8}, {32, 349.3}, {64, 425.2},
            {128, 596.9}, {256, 656.5}, {1024, 732.7}, {8192, 836.3}};
    ring = {{4, 148.1}, {8, 249.7}, {16, 337.4}, {32, 402.4}, {64, 471.8}, {128, 628.9}, {256, 632.5}, {8192, 697.6}};
    tree = {{4, 74.0}, {256, 316.0}, {8192, 348.8}};
    m.curve_points = {{1, 9.4 / 148.1}, {32, 1.0}};
    return m;
}

PerfModel parse_model(std::string_view yaml_text) {
    PerfModel m;
    m.anchors = {};
    try {
        YAML::Node root = YAML::Load(std::string(yaml_text));
        if (!root.IsMap()) throw ConfigError("model: top level must be a mapping");
        m.name = root["name"].as<std::string>("unnamed");
        m.ranks = root["ranks"].as<std::uint32_t>(m.ranks);
        m.max_channels = root["max_channels"].as<std::uint32_t>(m.max_channels);
        const auto anchors = root["anchors"];
        if (!anchors || !anchors.IsSequence()) throw ConfigError("model: 'anchors' must be a list of [algo, size_MiB, GBps]");
        for (const auto& a : anchors) {
            if (!a.IsSequence() || a.size() != 3) throw ConfigError("model: anchor must be [algo, size_MiB, GBps]");
            auto algo = parse_algorithm(a[0].as<std::string>());
            if (!algo) throw ConfigError("model: unknown algorithm '" + a[0].as<std::string>() + "'");
            m.anchors[static_cast<std::size_t>(*algo)].emplace_back(a[1].as<double>(), a[2].as<double>());
        }
        for (auto& pts : m.anchors) std::sort(pts.begin(), pts.end());
        const auto curve = root["channel_curve"];
        if (!curve || !curve.IsSequence()) throw ConfigError("model: 'channel_curve' must be a list of [channels, factor]");
        for (const auto& p : curve) {
            if (!p.IsSequence() || p.size() != 2) throw ConfigError("model: curve point must be [channels, factor]");
            m.curve_points.emplace_back(p[0].as<double>(), p[1].as<double>());
        }
        std::sort(m.curve_points.begin(), m.curve_points.end());
        if (const auto proto = root["protocol"]) {
            m.ll_small_factor = proto["ll_small_factor"].as<double>(m.ll_small_factor);
            m.ll_large_factor = proto["ll_large_factor"].as<double>(m.ll_large_factor);
            m.ll_threshold_bytes = proto["ll_threshold_bytes"].as<std::uint64_t>(m.ll_threshold_bytes);
        }
    } catch (const YAML::Exception& e) {
        throw ConfigError(std::string("model: ") + e.what());
    }
    if (auto err = m.validate(); !err.empty()) throw ConfigError("model: " + err);
    return m;
}

PerfModel load_model(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open model file " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_model(ss.str());
}

double bus_bytes(Collective coll, std::uint64_t msg_size, std::uint32_t n_ranks) {
    const double n = std::max<std::uint32_t>(n_ranks, 1);
    const double s = static_cast<double>(msg_size);
    switch (coll) {
    case Collective::ALLREDUCE: return s * 2.0 * (n - 1) / n;
    case Collective::ALLGATHER:
    case Collective::REDUCESCATTER: return s * (n - 1) / n;
    case Collective::BROADCAST: return s;
    }
    return s;
}

double transfer_latency_ns(double bytes, double gbps) { return bytes / gbps; }

} // namespace cclpol
