// Copyright (c) 2026, The LLEP Authors
// SPDX-License-Identifier: Apache-2.0
//
// Simulated P-device execution of one MoE layer step.
//
// Each simulated device owns its native expert weights and its local token
// batch. A step runs as a sequence of rendezvous phases (local sort, dispatch,
// weight import, grouped GEMMs, combine); a phase starts only after every
// device finished the previous one, so serial and threaded execution produce
// identical bits. Data moves by in-memory handoff, and every cross-device
// handoff is recorded as a Message for the cost model.

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "llep/core.hpp"
#include "llep/planner.hpp"
#include "llep/router.hpp"

namespace llep {

enum class ExecMode { serial, threaded };
enum class Method { ep, llep };

const char* to_string(Method method);

struct ExecOptions {
    ExecMode mode = ExecMode::serial;
};

struct GemmRecord {
    int expert = 0;
    std::int64_t rows = 0;
    bool foreign = false;

    bool operator==(const GemmRecord&) const = default;
};

enum class MessageKind { dispatch, combine, weight };

/// One cross-device transfer. `elements` counts scalars (dtype applied by the cost model).
/// Dispatch and combine are each a single All-to-All, so a device pair exchanges one
/// message per collective carrying all of its expert slices (expert == -1). Weight
/// imports are point-to-point, one message per (expert, destination).
struct Message {
    MessageKind kind = MessageKind::dispatch;
    int src = 0;
    int dst = 0;
    int expert = 0;
    std::int64_t rows = 0;
    std::int64_t elements = 0;

    bool operator==(const Message&) const = default;
};

/// What one step did on every device: GEMMs, messages, weight imports.
struct StepMetrics {
    MoeConfig config;
    bool used_lla = false;
    double imbalance_ratio = 1.0;
    std::uint64_t fingerprint = 0;
    std::vector<std::vector<GemmRecord>> gemms;  // [device], ascending expert
    std::vector<Message> messages;               // coalesced, sorted by (kind, src, dst, expert)
    std::vector<std::vector<int>> imports;       // [device] -> S_p
    std::vector<std::int64_t> tokens_executed;   // [device]

    bool operator==(const StepMetrics&) const = default;
};

/// Merges per-slice dispatch/combine records into one message per (kind, src, dst)
/// and returns all messages sorted by (kind, src, dst, expert).
std::vector<Message> coalesce_messages(std::vector<Message> raw);

/// Identity of a workload: config shape plus the full P x N load matrix.
std::uint64_t workload_fingerprint(const LoadMatrix& loads, const MoeConfig& config);

/// Metrics implied by a schedule, derived without touching any tensor data.
/// Dispatch traffic carries tokens and gates (D + 1 elements per row); combine
/// traffic carries outputs (H per row); a weight message carries D*H elements.
StepMetrics step_metrics(const LoadMatrix& loads, const AssignmentPlan& plan, const DeviceSendSchedule& schedule,
                         const WeightTransferPlan& transfers, const MoeConfig& config, bool used_lla);

/// A fully planned step (no numerics): the plan the method would execute and its metrics.
struct PlannedStep {
    Method method = Method::ep;
    bool balanced_fallback = false;
    AssignmentPlan plan;
    WeightTransferPlan transfers;
    DeviceSendSchedule schedule;
    StepMetrics metrics;
};

PlannedStep plan_step(const LoadMatrix& loads, const MoeConfig& config, const PlannerConfig& planner, Method method);

struct ExecResult {
    std::vector<Matrix> outputs;  // [device] B_p x H
    bool balanced_fallback = false;
    AssignmentPlan plan;
    WeightTransferPlan transfers;
    DeviceSendSchedule schedule;
    LoadMatrix loads;
    StepMetrics metrics;
    std::int64_t rows_sent = 0;
    std::int64_t rows_received = 0;
};

/// Dense single-process oracle: h = sum_k g_k * (u^T W_{i_k}) per token, given routings.
std::vector<Matrix> reference_forward(std::span<const TokenBatch> batches, std::span<const RouterOutput> routings,
                                      const ModelParams& params, const MoeConfig& config);

/// Dense oracle that routes every token itself first.
std::vector<Matrix> reference_forward(std::span<const TokenBatch> batches, const ModelParams& params,
                                      const MoeConfig& config);

/// Standard expert parallelism: every expert's tokens go to its native device.
ExecResult ep_dispatch_combine(std::span<const TokenBatch> batches, std::span<const RouterOutput> routings,
                               const ModelParams& params, const MoeConfig& config, const ExecOptions& options = {});

/// Least-loaded expert parallelism. Falls back to ep_dispatch_combine when the
/// gathered loads are balanced under `planner.lambda`.
ExecResult llep_dispatch_combine(std::span<const TokenBatch> batches, std::span<const RouterOutput> routings,
                                 const ModelParams& params, const MoeConfig& config, const PlannerConfig& planner,
                                 const ExecOptions& options = {});

/// Expert weight gradients, each held by its expert's native device.
struct GradientAccumulator {
    std::vector<Matrix> grads;  // [expert] D x H
};

/// Gradient contribution computed on `device` for `expert`.
struct PartialGradient {
    int expert = 0;
    int device = 0;
    Matrix grad;
};

struct BackwardResult {
    GradientAccumulator accumulated;
    std::vector<PartialGradient> partials;  // sorted by (expert, device)
    AssignmentPlan plan;
    WeightTransferPlan transfers;
    int gradients_returned = 0;  // foreign partials sent back to native devices
};

/// dL/dW_i = sum over (token, slot) routed to i of g * u (x) dL/dh, computed where the
/// chunks executed under `method`, with foreign partials returned and summed on the
/// native device in ascending device order.
BackwardResult backward_weights(std::span<const TokenBatch> batches, std::span<const RouterOutput> routings,
                                const ModelParams& params, const MoeConfig& config, const PlannerConfig& planner,
                                std::span<const Matrix> upstream_grads, Method method = Method::llep,
                                const ExecOptions& options = {});

/// Same formula evaluated densely token by token.
std::vector<Matrix> reference_weight_gradients(std::span<const TokenBatch> batches,
                                               std::span<const RouterOutput> routings, const MoeConfig& config,
                                               std::span<const Matrix> upstream_grads);

}  // namespace llep
