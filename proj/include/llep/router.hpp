// Copyright (c) 2026, The LLEP Authors
// SPDX-License-Identifier: Apache-2.0
//
// Softmax top-K router and the sort/re-index machinery that turns a device's
// (token, slot) pairs into contiguous per-expert chunks, plus its inverse.

#pragma once

#include <cstdint>
#include <vector>

#include "llep/core.hpp"

namespace llep {

/// Per-token top-K expert ids and gate values for one device.
/// Gates are the full-softmax scores of the selected experts (no renormalization).
struct RouterOutput {
    int device_id = 0;
    int n_experts = 0;
    int top_k = 0;
    std::vector<int> indices;    // B_p x K, row-major
    std::vector<double> gates;   // B_p x K, row-major

    std::size_t num_tokens() const { return top_k > 0 ? indices.size() / static_cast<std::size_t>(top_k) : 0; }
    int index(std::size_t token, int slot) const { return indices[token * static_cast<std::size_t>(top_k) + static_cast<std::size_t>(slot)]; }
    double gate(std::size_t token, int slot) const { return gates[token * static_cast<std::size_t>(top_k) + static_cast<std::size_t>(slot)]; }

    bool operator==(const RouterOutput&) const = default;
};

struct SortedDispatch {
    int top_k = 0;
    std::vector<int> sorted_indices;             // length B_p*K, nondecreasing
    std::vector<std::size_t> permutation;        // sorted position -> flat (token*K + slot)
    Matrix sorted_tokens;                        // (B_p*K) x D
    std::vector<double> sorted_gates;            // length B_p*K
    std::vector<std::int64_t> per_expert_counts; // length N

    /// Row offset of expert `expert`'s contiguous chunk in sorted order.
    std::vector<std::int64_t> expert_offsets() const;
};

/// s = softmax(u^T W_r), keep the K largest (ties -> lower expert id).
RouterOutput route(const TokenBatch& batch, const ModelParams& params, const MoeConfig& config);

/// Checks index range, per-row distinctness and shape against `config`.
void validate_routing(const RouterOutput& routing, const MoeConfig& config);

/// Stable sort of flattened (token, slot) pairs by expert id, gathering tokens and gates.
SortedDispatch sort_reindex(const TokenBatch& batch, const RouterOutput& routing);

/// Inverse permutation, reshape to (B_p, K, H), sum over K in slot order.
Matrix combine_unsort(const Matrix& sorted_outputs, const SortedDispatch& dispatch);

}  // namespace llep
