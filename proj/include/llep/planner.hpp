// Copyright (c) 2026, The LLEP Authors
// SPDX-License-Identifier: Apache-2.0
//
// Least-loaded assignment planning.
//
// Given the global per-expert loads, the planner walks experts from heaviest to
// lightest and keeps as much of each expert's work as possible on its native
// device. Whatever exceeds the per-device capacity m_alpha = alpha * sum(l) / P
// is spilled to the currently least-loaded other devices, subject to a minimum
// chunk size for every non-final spill. Each expert's work is described as
// consecutive [start, end) ranges over its global token index space, and every
// non-native range implies a P2P copy of that expert's weights.
//
// Global token order for an expert is the concatenation of every device's
// contribution in ascending device rank; materialize_send_schedule() maps the
// plan's global ranges back onto each source device's local sorted chunk.

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "llep/core.hpp"

namespace llep {

/// counts[p][i]: tokens device p routes to expert i. global_loads = column sums.
struct LoadMatrix {
    std::vector<std::vector<std::int64_t>> counts;
    std::vector<std::int64_t> global_loads;

    int world_size() const { return static_cast<int>(counts.size()); }
    int n_experts() const { return static_cast<int>(global_loads.size()); }
    std::int64_t total() const;

    bool operator==(const LoadMatrix&) const = default;
};

struct Chunk {
    int device = 0;
    std::int64_t start = 0;
    std::int64_t end = 0;

    std::int64_t size() const { return end - start; }
    bool operator==(const Chunk&) const = default;
};

struct AssignmentPlan {
    std::vector<std::vector<Chunk>> per_expert;  // ordered chunks over [0, l_i)
    std::vector<std::int64_t> assigned_load;     // g_a
    double capacity = 0.0;                       // m_alpha
    int force_count = 0;                         // number of force-assign events

    bool operator==(const AssignmentPlan&) const = default;
};

struct WeightTransfer {
    int expert = 0;
    int src_device = 0;
    int dst_device = 0;

    auto operator<=>(const WeightTransfer&) const = default;
};

/// Sorted by (expert, src, dst); (expert, dst) unique.
struct WeightTransferPlan {
    std::vector<WeightTransfer> transfers;

    bool operator==(const WeightTransferPlan&) const = default;
};

/// Mutable bookkeeping shared by lla_plan and llas_spill.
struct SpillState {
    std::vector<std::int64_t> assigned;  // g_a
    std::vector<std::int64_t> pending;   // g_p
    double capacity = 0.0;               // m_alpha
    std::int64_t min_chunk = 0;          // m
    int force_count = 0;
};

/// One slice of a source device's sorted local chunk for `expert`, bound for `dst_device`.
struct SendSlice {
    int expert = 0;
    int dst_device = 0;
    std::int64_t local_start = 0;
    std::int64_t local_end = 0;

    std::int64_t size() const { return local_end - local_start; }
    bool operator==(const SendSlice&) const = default;
};

struct DeviceSendSchedule {
    std::vector<std::vector<SendSlice>> per_source;  // [src] -> slices, ordered by expert then plan order
    std::vector<std::vector<int>> foreign_experts;   // [dst] -> S, ascending

    bool operator==(const DeviceSendSchedule&) const = default;
};

/// Stacks per-device count rows (the simulated all-gather) and sums columns.
LoadMatrix gather_loads(std::span<const std::vector<std::int64_t>> per_device_counts, const MoeConfig& config);
LoadMatrix gather_loads(std::span<const std::vector<std::int64_t>> per_device_counts);

/// max(l) / mean(l); 1.0 when the mean is zero.
double imbalance_ratio(std::span<const std::int64_t> loads);

bool is_balanced(std::span<const std::int64_t> loads, double lambda);

/// Alg. "least-loaded assignment": returns the chunk plan and the derived weight transfers.
std::pair<AssignmentPlan, WeightTransferPlan> lla_plan(std::span<const std::int64_t> loads, const MoeConfig& config,
                                                       const PlannerConfig& planner);

/// Spill `remaining` tokens of an expert native to `native_device`, starting at global
/// offset `offset`, onto the least-loaded other devices. Appends to `chunks`.
void llas_spill(SpillState& state, int native_device, std::int64_t remaining, std::int64_t offset,
                std::vector<Chunk>& chunks);

/// Every expert's full load on its native device (standard EP).
AssignmentPlan native_plan(std::span<const std::int64_t> loads, const MoeConfig& config);

/// {(i, native(i), d)} for every chunk of expert i on d != native(i), deduplicated and sorted.
WeightTransferPlan build_weight_transfers(const AssignmentPlan& plan, const MoeConfig& config);

/// Maps the plan's global ranges onto each source's local sorted chunks.
DeviceSendSchedule materialize_send_schedule(const AssignmentPlan& plan, const LoadMatrix& loads,
                                             const MoeConfig& config);

/// Structural check of a plan against its loads. Returns the names of violated
/// invariants (empty when sound): coverage, contiguity, conservation,
/// native-first, capacity, weight-plan-soundness.
std::vector<std::string> check_plan_invariants(const AssignmentPlan& plan, const WeightTransferPlan& transfers,
                                               std::span<const std::int64_t> loads, const MoeConfig& config);

}  // namespace llep
