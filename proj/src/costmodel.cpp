// Copyright (c) 2026, The LLEP Authors
// SPDX-License-Identifier: Apache-2.0

#include "llep/costmodel.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "json.hpp"

namespace llep {

namespace {

using nlohmann::json;

void apply_overrides(CostParams& p, const json& j) {
    auto read = [&](const char* key, double& field) {
        if (!j.contains(key)) return;
        const auto& v = j.at(key);
        if (v.is_string() && v.get<std::string>() == "inf") {
            field = std::numeric_limits<double>::infinity();
        } else if (v.is_number()) {
            field = v.get<double>();
        } else {
            throw LlepError(std::string("cost parameter '") + key + "' must be a number");
        }
    };
    read("t_launch", p.t_launch);
    read("flops_rate", p.flops_rate);
    read("eff_floor", p.eff_floor);
    read("eff_saturation_batch", p.eff_saturation_batch);
    read("link_bandwidth", p.link_bandwidth);
    read("link_latency", p.link_latency);
    read("dtype_bytes", p.dtype_bytes);
    for (const auto& [key, _] : j.items()) {
        static const char* known[] = {"profile",        "t_launch",     "flops_rate",  "eff_floor",
                                      "eff_saturation_batch", "link_bandwidth", "link_latency", "dtype_bytes"};
        if (std::none_of(std::begin(known), std::end(known), [&](const char* k) { return key == k; })) {
            throw LlepError("unknown cost parameter '" + key + "'");
        }
    }
}

}  // namespace

void validate_cost_params(const CostParams& p) {
    if (!(p.t_launch >= 0.0) || !std::isfinite(p.t_launch)) throw LlepError("t_launch must be finite and >= 0");
    if (!(p.flops_rate > 0.0)) throw LlepError("flops_rate must be positive");
    if (!(p.eff_floor > 0.0 && p.eff_floor <= 1.0)) throw LlepError("eff_floor must be in (0, 1]");
    if (!(p.eff_saturation_batch > 0.0)) throw LlepError("eff_saturation_batch must be positive");
    if (!(p.link_bandwidth > 0.0)) throw LlepError("link_bandwidth must be positive");
    if (!(p.link_latency >= 0.0) || !std::isfinite(p.link_latency)) throw LlepError("link_latency must be finite and >= 0");
    if (!(p.dtype_bytes > 0.0)) throw LlepError("dtype_bytes must be positive");
}

std::vector<std::string> cost_profile_names() { return {"h200", "compute-only"}; }

CostParams cost_profile(const std::string& name) {
    if (name == "h200" || name == "default") return CostParams{};
    if (name == "compute-only") {
        CostParams p;
        p.t_launch = 0.0;
        p.eff_floor = 1.0;
        p.link_bandwidth = std::numeric_limits<double>::infinity();
        p.link_latency = 0.0;
        return p;
    }
    throw LlepError("unknown cost profile '" + name + "'");
}

CostParams cost_params_from_json_text(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw LlepError(std::string("cost parameters are not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw LlepError("cost parameters must be a JSON object");
    CostParams p = cost_profile(j.value("profile", std::string("h200")));
    apply_overrides(p, j);
    validate_cost_params(p);
    return p;
}

CostParams load_cost_params(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw LlepError("cannot open cost parameter file " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return cost_params_from_json_text(ss.str());
}

std::string cost_params_to_json_text(const CostParams& p) {
    auto num = [](double v) -> json {
        if (std::isinf(v)) return "inf";
        return v;
    };
    json j = {{"t_launch", num(p.t_launch)},
              {"flops_rate", num(p.flops_rate)},
              {"eff_floor", num(p.eff_floor)},
              {"eff_saturation_batch", num(p.eff_saturation_batch)},
              {"link_bandwidth", num(p.link_bandwidth)},
              {"link_latency", num(p.link_latency)},
              {"dtype_bytes", num(p.dtype_bytes)}};
    return j.dump();
}

std::uint64_t cost_params_hash(const CostParams& p) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (double v : {p.t_launch, p.flops_rate, p.eff_floor, p.eff_saturation_batch, p.link_bandwidth, p.link_latency,
                     p.dtype_bytes}) {
        const auto bits = std::bit_cast<std::uint64_t>(v);
        for (int b = 0; b < 8; ++b) {
            h ^= (bits >> (8 * b)) & 0xffU;
            h *= 0x100000001b3ULL;
        }
    }
    return h;
}

double gemm_efficiency(std::int64_t tokens, const CostParams& params) {
    const double ramp = std::min(1.0, static_cast<double>(tokens) / params.eff_saturation_batch);
    return params.eff_floor + (1.0 - params.eff_floor) * ramp;
}

double gemm_time(std::int64_t tokens, int d_model, int d_hidden, const CostParams& params) {
    if (tokens <= 0) return 0.0;
    const double flops = 2.0 * static_cast<double>(tokens) * d_model * d_hidden;
    return params.t_launch + flops / (params.flops_rate * gemm_efficiency(tokens, params));
}

double comm_time(double bytes, const CostParams& params) {
    if (bytes <= 0.0) return 0.0;
    return params.link_latency + bytes / params.link_bandwidth;
}

DeviceTime device_time(const StepMetrics& metrics, int device, const CostParams& params) {
    DeviceTime t;
    const auto& cfg = metrics.config;
    for (const auto& g : metrics.gemms.at(static_cast<std::size_t>(device))) {
        t.compute_seconds += gemm_time(g.rows, cfg.d_model, cfg.d_hidden, params);
    }
    for (const auto& m : metrics.messages) {
        if (m.src == device || m.dst == device) {
            t.comm_seconds += comm_time(static_cast<double>(m.elements) * params.dtype_bytes, params);
        }
    }
    return t;
}

double peak_memory(const StepMetrics& metrics, int device, const CostParams& params) {
    const auto& cfg = metrics.config;
    const double d = cfg.d_model;
    const double h = cfg.d_hidden;
    double elements = 0.0;
    for (const auto& g : metrics.gemms.at(static_cast<std::size_t>(device))) {
        elements += static_cast<double>(g.rows) * (d + h);
    }
    const double weights = static_cast<double>(cfg.experts_per_device()) +
                           static_cast<double>(metrics.imports.at(static_cast<std::size_t>(device)).size());
    elements += weights * d * h;
    return elements * params.dtype_bytes;
}

SimReport build_report(const StepMetrics& metrics, const CostParams& params, const std::string& method,
                       const std::string& scenario_id) {
    validate_cost_params(params);
    SimReport report;
    report.scenario_id = scenario_id;
    report.method = method;
    report.fingerprint = metrics.fingerprint;
    for (int p = 0; p < metrics.config.world_size; ++p) {
        const DeviceTime t = device_time(metrics, p, params);
        DeviceCost c;
        c.device = p;
        c.tokens_executed = metrics.tokens_executed.at(static_cast<std::size_t>(p));
        c.compute_seconds = t.compute_seconds;
        c.comm_seconds = t.comm_seconds;
        c.total_seconds = t.total();
        c.peak_memory_bytes = peak_memory(metrics, p, params);
        report.makespan_seconds = std::max(report.makespan_seconds, c.total_seconds);
        report.max_peak_memory_bytes = std::max(report.max_peak_memory_bytes, c.peak_memory_bytes);
        report.devices.push_back(c);
    }
    return report;
}

Comparison compare(const SimReport& baseline, const SimReport& candidate) {
    if (baseline.fingerprint != candidate.fingerprint) throw LlepError("reports describe different workloads");
    Comparison c;
    c.speedup = baseline.makespan_seconds == candidate.makespan_seconds
                    ? 1.0
                    : baseline.makespan_seconds / candidate.makespan_seconds;
    c.memory_ratio = baseline.max_peak_memory_bytes == candidate.max_peak_memory_bytes
                         ? 1.0
                         : baseline.max_peak_memory_bytes / candidate.max_peak_memory_bytes;
    return c;
}

}  // namespace llep
