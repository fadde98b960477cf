// Copyright (c) 2026, The LLEP Authors
// SPDX-License-Identifier: Apache-2.0
//
// Internal machinery shared by the forward and backward simulated steps:
// per-device local sort, schedule-driven token dispatch, P2P weight import and
// per-expert assembly of received chunks.

#pragma once

#include <functional>
#include <map>
#include <span>
#include <vector>

#include "llep/simexec.hpp"

namespace llep::detail {

/// Runs fn(device) for every device; returns once all have finished.
void for_each_device(int world, ExecMode mode, const std::function<void(int)>& fn);

/// Rows of one source device's sorted chunk for one expert, in transit.
struct Parcel {
    int src = 0;
    int expert = 0;
    std::int64_t local_start = 0;
    Matrix tokens;
    std::vector<double> gates;
    Matrix upstream;  // dL/dh rows, backward only
};

/// Everything a device received for one expert, concatenated in source order.
struct ExpertWork {
    int expert = 0;
    bool foreign = false;
    std::vector<const Parcel*> parts;
    Matrix tokens;
    std::vector<double> gates;
    Matrix upstream;
};

class StepRunner {
public:
    StepRunner(std::span<const TokenBatch> batches, std::span<const RouterOutput> routings, const ModelParams& params,
               const MoeConfig& config, const ExecOptions& options);

    int world() const { return config_.world_size; }
    const MoeConfig& config() const { return config_; }
    const ExecOptions& options() const { return options_; }

    void sort_local();
    const SortedDispatch& sorted(int device) const { return sorted_[static_cast<std::size_t>(device)]; }
    LoadMatrix gather() const;

    /// Plans on every device from the gathered loads and checks they agree.
    void plan_everywhere(const LoadMatrix& loads, const PlannerConfig& planner, bool use_lla);
    void install(AssignmentPlan plan, WeightTransferPlan transfers, const LoadMatrix& loads);

    void dispatch(std::span<const Matrix> upstream = {});
    void import_weights();
    std::vector<ExpertWork> assemble(int device) const;
    const Matrix& weights_for(int device, int expert) const;
    void clear_imports();

    // Metric recording; each device writes only its own slot.
    void record_message(int device, const Message& m) { messages_[static_cast<std::size_t>(device)].push_back(m); }
    void record_gemm(int device, const GemmRecord& g) { gemms_[static_cast<std::size_t>(device)].push_back(g); }
    StepMetrics collect_metrics(bool used_lla, double ratio) const;

    const AssignmentPlan& plan() const { return plan_; }
    const WeightTransferPlan& transfers() const { return transfers_; }
    const DeviceSendSchedule& schedule() const { return schedule_; }
    const LoadMatrix& loads() const { return loads_; }
    std::int64_t rows_sent() const;
    std::int64_t rows_received() const;
    std::size_t imported_count(int device) const { return imported_[static_cast<std::size_t>(device)].size(); }

private:
    std::span<const TokenBatch> batches_;
    std::span<const RouterOutput> routings_;
    const ModelParams& params_;
    MoeConfig config_;
    ExecOptions options_;

    std::vector<SortedDispatch> sorted_;
    std::vector<std::vector<std::int64_t>> offsets_;
    AssignmentPlan plan_;
    WeightTransferPlan transfers_;
    DeviceSendSchedule schedule_;
    LoadMatrix loads_;

    std::vector<std::vector<std::vector<Parcel>>> inbox_;  // [dst][src]
    std::vector<std::map<int, Matrix>> imported_;           // [dst] expert -> W
    std::vector<std::vector<Message>> messages_;
    std::vector<std::vector<GemmRecord>> gemms_;
    std::vector<std::int64_t> sent_;
    std::vector<std::int64_t> received_;
};

/// Validates batches/routings against the config (one per device, matching ids and shapes).
void check_inputs(std::span<const TokenBatch> batches, std::span<const RouterOutput> routings, const MoeConfig& config);

}  // namespace llep::detail
