// Copyright (c) 2026, The LLEP Authors
// SPDX-License-Identifier: Apache-2.0
//
// Machine-readable artifacts: CSV for tabular reports, JSON for plan documents
// and run manifests. Doubles are written with 17 significant digits so every
// CSV parses back to the identical in-memory values.

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "llep/costmodel.hpp"
#include "llep/planner.hpp"
#include "llep/simexec.hpp"

namespace llep {

/// "%.17g"; "inf" / "-inf" / "nan" for non-finite values.
std::string format_double(double value);
double parse_double(const std::string& text);

/// Splits one CSV line on commas (no quoting; fields never contain commas).
std::vector<std::string> split_csv_line(const std::string& line);

// Simulation report CSV
//
// Header:
//   scenario_id,method,device,tokens_executed,compute_s,comm_s,total_s,
//   peak_mem_bytes,makespan_s,speedup,mem_ratio,fingerprint
//
// Each report contributes one row per device followed by an aggregate row whose
// device field is "all". Device rows leave makespan_s, speedup and mem_ratio
// empty; the aggregate row leaves compute_s, comm_s and total_s empty, carries
// the summed tokens and the maximum peak memory, and leaves speedup and
// mem_ratio empty when the report has no baseline.

extern const char* const kSimCsvHeader;

std::string format_sim_csv(const std::vector<SimReport>& reports);
std::vector<SimReport> parse_sim_csv(const std::string& text);

// Sweep CSV: one row per axis value, sorted by axis value.

struct SweepRow {
    std::string axis;
    double axis_value = 0.0;
    std::string scenario_id;
    int n_experts = 0;
    int d_hidden = 0;
    std::int64_t tokens_per_device = 0;
    double alpha = 1.0;
    double lambda = 1.3;
    double ep_makespan_s = 0.0;
    double llep_makespan_s = 0.0;
    double speedup = 1.0;
    double ep_peak_mem_bytes = 0.0;
    double llep_peak_mem_bytes = 0.0;
    double mem_ratio = 1.0;
    bool used_lla = false;
    int force_count = 0;

    bool operator==(const SweepRow&) const = default;
};

extern const char* const kSweepCsvHeader;

std::string format_sweep_csv(const std::vector<SweepRow>& rows);
std::vector<SweepRow> parse_sweep_csv(const std::string& text);

// Plan documents

struct PlanDocument {
    std::string record_id;
    MoeConfig config;
    PlannerConfig planner;
    std::vector<std::int64_t> global_loads;
    double imbalance_ratio = 1.0;
    bool balanced_fallback = false;
    AssignmentPlan plan;
    WeightTransferPlan transfers;
};

/// JSON object: record_id, config, planner, loads, imbalance_ratio,
/// balanced_fallback, capacity, force_count, chunks [{expert, device, start,
/// end}], transfers [{expert, src, dst}].
std::string plan_document_json(const PlanDocument& doc);
std::string plan_documents_json(const std::vector<PlanDocument>& docs);

/// Line-oriented rendering for terminals:
///   record <id> loads=<l0,l1,...> imbalance=<r>
///   balanced: EP fallback            (only when the EP path was taken)
///   chunk expert=<i> device=<d> start=<s> end=<e>
///   transfer expert=<i> src=<s> dst=<d>
std::string plan_document_text(const PlanDocument& doc);

/// Run manifest: command, run configuration (as JSON text), seed, cost
/// parameters and their hash, and the list of files produced.
std::string manifest_json(const std::string& command, const std::string& run_config_json, std::uint64_t seed,
                          const CostParams& cost, const std::vector<std::string>& outputs);

std::string hex64(std::uint64_t value);

}  // namespace llep
