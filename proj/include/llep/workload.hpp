// Copyright (c) 2026, The LLEP Authors
// SPDX-License-Identifier: Apache-2.0
//
// Synthetic routing scenarios and trace ingestion.
//
// A concentrated scenario "x into y experts" gives each of the y hot experts
// (ids 0..y-1) probability x/y and spreads 1-x evenly over the other N-y.

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "llep/core.hpp"
#include "llep/planner.hpp"
#include "llep/router.hpp"

namespace llep {

enum class ScenarioMode { balanced, concentrated };

struct Scenario {
    MoeConfig config;
    ScenarioMode mode = ScenarioMode::balanced;
    int hot_expert_count = 1;    // y
    double hot_fraction = 0.0;   // x
    std::int64_t tokens_per_device = 0;
    std::uint64_t seed = 0;

    /// Short label such as "balanced" or "95pct_into_1".
    std::string id() const;
};

void validate_scenario(const Scenario& scenario);

std::vector<double> target_distribution(const Scenario& scenario);

struct RoutedBatch {
    TokenBatch batch;
    RouterOutput routing;
};

/// Without params: K distinct experts per token by weighted sampling without
/// replacement from the target distribution, gates 1/K. With params: tokens are
/// routed through the softmax router instead.
std::vector<RoutedBatch> generate_routing(const Scenario& scenario, const ModelParams* params = nullptr);

/// Direct slot-level load matrix for planner and cost-model runs: each device's
/// B_p*K routed slots drawn independently from the target distribution (seeded
/// multinomial). Unlike generate_routing, a token's slots are not forced to be
/// distinct, so a single expert can hold more than 1/K of the load.
LoadMatrix scenario_load_matrix(const Scenario& scenario);

/// Per-device routed-slot counts of generated routings.
LoadMatrix count_loads(const std::vector<RoutedBatch>& routed, int n_experts);

struct TraceRecord {
    std::string record_id;
    LoadMatrix loads;
};

/// Line format: record_id, then N (global loads, attributed to device 0) or
/// P*N (device-major) nonnegative integers. Blank lines and '#' comments skipped.
std::vector<TraceRecord> load_trace(const std::string& path, const MoeConfig& config);
std::vector<TraceRecord> parse_trace(const std::string& text, const MoeConfig& config);

/// One trace line in the full P*N format.
std::string format_trace_record(const std::string& record_id, const LoadMatrix& loads);

}  // namespace llep
