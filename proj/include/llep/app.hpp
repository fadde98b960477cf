// Copyright (c) 2026, The LLEP Authors
// SPDX-License-Identifier: Apache-2.0
//
// Command implementations behind the `llep` binary.
//
// Every command takes a fully resolved RunConfig and writes its artifacts either
// to stdout (no output directory) or into `out_dir` together with a
// manifest.json describing how to regenerate them.

#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "llep/costmodel.hpp"
#include "llep/report.hpp"
#include "llep/verify.hpp"
#include "llep/workload.hpp"

namespace llep {

/// An exactness or invariant check failed (exit code 2). Plain LlepError means
/// invalid input (exit code 1).
class CheckFailure : public LlepError {
public:
    using LlepError::LlepError;
};

enum class MethodSelector { ep, llep, both };

struct RunConfig {
    MoeConfig config{128, 4, 2048, 2048, 8};
    PlannerConfig planner;
    ScenarioMode mode = ScenarioMode::concentrated;
    int hot_count = 1;
    double hot_fraction = 0.95;
    std::int64_t tokens_per_device = 32768;
    std::uint64_t seed = 1;
    MethodSelector method = MethodSelector::both;

    std::string profile = "h200";
    std::optional<std::string> cost_file;  // JSON cost parameters, overrides `profile`

    std::string out_dir;                   // empty: write to stdout
    std::string trace_path;                // load records from a trace instead of the scenario
    std::vector<std::int64_t> loads;       // inline global loads (plan only)

    bool cost_only = false;                // skip dense numerics, plan on direct slot-level loads
    std::int64_t element_budget = std::int64_t{1} << 28;
    int threads = 1;                       // simulated devices (simulate) or concurrent points (sweep)
};

/// JSON keys mirror the long CLI flags with '-' replaced by '_': n_experts,
/// top_k, d_model, d_hidden, world_size, tokens_per_device, hot_fraction,
/// hot_count, balanced, alpha, min_chunk, lambda, seed, method, profile,
/// cost_file, out, trace, loads, cost_only, element_budget, threads.
/// Unknown keys are rejected.
RunConfig run_config_from_json_text(const std::string& text, RunConfig base = {});
RunConfig load_run_config(const std::string& path, RunConfig base = {});
std::string run_config_to_json_text(const RunConfig& run);

/// "10,0,4" -> {10, 0, 4}; rejects negative or malformed entries.
std::vector<std::int64_t> parse_load_list(const std::string& text);

MethodSelector parse_method(const std::string& text);
const char* to_string(MethodSelector method);

Scenario make_scenario(const RunConfig& run);
CostParams resolve_cost_params(const RunConfig& run);

/// Scalars a dense simulation of the scenario would hold (tokens, sorted copies,
/// outputs, expert weights).
std::int64_t dense_element_count(const RunConfig& run);

// Result builders (no I/O)

std::vector<PlanDocument> build_plan_documents(const RunConfig& run);

/// EP and/or LLEP reports per workload. With method both, the LLEP report carries
/// speedup and memory ratio against EP.
std::vector<SimReport> build_sim_reports(const RunConfig& run);

extern const std::vector<std::string> kSweepAxes;  // alpha, lambda, batch, hidden, experts

/// One EP-vs-LLEP comparison per value, computed concurrently on up to
/// run.threads workers, returned sorted by axis value.
std::vector<SweepRow> build_sweep_rows(const RunConfig& run, const std::string& axis, const std::vector<double>& values);

// Commands: write artifacts, return the process exit code, report errors by exception.

int cmd_plan(const RunConfig& run, std::ostream& out);
int cmd_simulate(const RunConfig& run, std::ostream& out);
int cmd_sweep(const RunConfig& run, const std::string& axis, const std::vector<double>& values, std::ostream& out);
int cmd_verify(const VerifyOptions& options, std::ostream& out);
int cmd_gen(const RunConfig& run, std::ostream& out);

}  // namespace llep
