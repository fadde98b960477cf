// Copyright (c) 2026, The LLEP Authors
// SPDX-License-Identifier: Apache-2.0
//
// Analytic latency and peak-memory model applied to the metrics of a
// simulated step.
//
//   gemm_time(b)  = t_launch + 2*b*D*H / (flops_rate * eff(b)),   0 when b == 0
//   eff(b)        = eff_floor + (1 - eff_floor) * min(1, b / eff_saturation_batch)
//   comm_time(n)  = link_latency + n / link_bandwidth,             0 when n == 0
//   device time   = sum of its GEMMs + sum of every message it sends or receives
//   peak memory   = dtype_bytes * (sum_i B_i*(D + H) + (M + |imports|) * D*H)
//
// There is no compute/communication overlap: a device's time is a serial sum.

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "llep/simexec.hpp"

namespace llep {

struct CostParams {
    double t_launch = 5e-6;                // seconds per GEMM launch
    double flops_rate = 9.9e14;            // FLOP/s at full efficiency
    double eff_floor = 0.1;                // efficiency at batch 1
    double eff_saturation_batch = 4096.0;  // batch reaching full efficiency
    double link_bandwidth = 4.5e11;        // bytes/s
    double link_latency = 1e-5;            // seconds per message
    double dtype_bytes = 2.0;

    bool operator==(const CostParams&) const = default;
};

/// Throws LlepError on a parameter outside its domain.
void validate_cost_params(const CostParams& params);

/// Names accepted by cost_profile(): "h200" (default) and "compute-only"
/// (no launch or link cost, full efficiency at any batch).
std::vector<std::string> cost_profile_names();
CostParams cost_profile(const std::string& name);

/// Reads a JSON object; an optional "profile" key selects the base profile and
/// any other key overrides the matching field.
CostParams load_cost_params(const std::string& path);
CostParams cost_params_from_json_text(const std::string& text);
std::string cost_params_to_json_text(const CostParams& params);

/// Stable 64-bit hash of the parameter values.
std::uint64_t cost_params_hash(const CostParams& params);

double gemm_efficiency(std::int64_t tokens, const CostParams& params);
double gemm_time(std::int64_t tokens, int d_model, int d_hidden, const CostParams& params);
double comm_time(double bytes, const CostParams& params);

struct DeviceTime {
    double compute_seconds = 0.0;
    double comm_seconds = 0.0;
    double total() const { return compute_seconds + comm_seconds; }
};

DeviceTime device_time(const StepMetrics& metrics, int device, const CostParams& params);
double peak_memory(const StepMetrics& metrics, int device, const CostParams& params);

struct DeviceCost {
    int device = 0;
    std::int64_t tokens_executed = 0;
    double compute_seconds = 0.0;
    double comm_seconds = 0.0;
    double total_seconds = 0.0;
    double peak_memory_bytes = 0.0;

    bool operator==(const DeviceCost&) const = default;
};

struct SimReport {
    std::string scenario_id;
    std::string method;
    std::uint64_t fingerprint = 0;
    std::vector<DeviceCost> devices;
    double makespan_seconds = 0.0;
    double max_peak_memory_bytes = 0.0;
    std::optional<double> speedup;     // vs a baseline, when one was compared
    std::optional<double> memory_ratio;

    bool operator==(const SimReport&) const = default;
};

SimReport build_report(const StepMetrics& metrics, const CostParams& params, const std::string& method,
                       const std::string& scenario_id = "");

struct Comparison {
    double speedup = 1.0;       // baseline makespan / candidate makespan
    double memory_ratio = 1.0;  // baseline max peak / candidate max peak
};

/// Throws LlepError when the reports describe different workloads.
Comparison compare(const SimReport& baseline, const SimReport& candidate);

}  // namespace llep
