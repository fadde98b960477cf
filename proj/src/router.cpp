// Copyright (c) 2026, The LLEP Authors
// SPDX-License-Identifier: Apache-2.0

#include "llep/router.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace llep {

std::vector<std::int64_t> SortedDispatch::expert_offsets() const {
    std::vector<std::int64_t> offsets(per_expert_counts.size(), 0);
    std::int64_t acc = 0;
    for (std::size_t i = 0; i < per_expert_counts.size(); ++i) {
        offsets[i] = acc;
        acc += per_expert_counts[i];
    }
    return offsets;
}

RouterOutput route(const TokenBatch& batch, const ModelParams& params, const MoeConfig& config) {
    validate_config(config);
    const auto n = static_cast<std::size_t>(config.n_experts);
    const auto d = static_cast<std::size_t>(config.d_model);
    if (batch.tokens.rows() > 0 && batch.tokens.cols() != d) throw LlepError("token width does not match D");
    if (params.router_weights.rows() != d || params.router_weights.cols() != n) {
        throw LlepError("router weights are not D x N");
    }

    RouterOutput out;
    out.device_id = batch.device_id;
    out.n_experts = config.n_experts;
    out.top_k = config.top_k;
    const std::size_t tokens = batch.tokens.rows();
    out.indices.reserve(tokens * static_cast<std::size_t>(config.top_k));
    out.gates.reserve(tokens * static_cast<std::size_t>(config.top_k));

    std::vector<double> logits(n);
    std::vector<double> scores(n);
    std::vector<int> order(n);
    for (std::size_t t = 0; t < tokens; ++t) {
        auto u = batch.tokens.row(t);
        std::fill(logits.begin(), logits.end(), 0.0);
        for (std::size_t k = 0; k < d; ++k) {
            auto wr = params.router_weights.row(k);
            for (std::size_t i = 0; i < n; ++i) logits[i] += u[k] * wr[i];
        }
        for (double v : logits) {
            if (!std::isfinite(v)) throw LlepError("router overflow");
        }

        const double max_logit = *std::max_element(logits.begin(), logits.end());
        double sum = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            scores[i] = std::exp(logits[i] - max_logit);
            sum += scores[i];
        }
        for (double& s : scores) s /= sum;

        std::iota(order.begin(), order.end(), 0);
        std::partial_sort(order.begin(), order.begin() + config.top_k, order.end(), [&](int a, int b) {
            if (scores[static_cast<std::size_t>(a)] != scores[static_cast<std::size_t>(b)]) {
                return scores[static_cast<std::size_t>(a)] > scores[static_cast<std::size_t>(b)];
            }
            return a < b;
        });
        for (int k = 0; k < config.top_k; ++k) {
            const int e = order[static_cast<std::size_t>(k)];
            out.indices.push_back(e);
            out.gates.push_back(scores[static_cast<std::size_t>(e)]);
        }
    }
    return out;
}

void validate_routing(const RouterOutput& routing, const MoeConfig& config) {
    if (routing.top_k != config.top_k || routing.n_experts != config.n_experts) {
        throw LlepError("routing shape does not match config");
    }
    if (routing.indices.size() != routing.gates.size()) throw LlepError("routing indices/gates length mismatch");
    if (routing.top_k > 0 && routing.indices.size() % static_cast<std::size_t>(routing.top_k) != 0) {
        throw LlepError("routing length is not a multiple of K");
    }
    const std::size_t tokens = routing.num_tokens();
    for (std::size_t t = 0; t < tokens; ++t) {
        for (int k = 0; k < routing.top_k; ++k) {
            const int e = routing.index(t, k);
            if (e < 0 || e >= config.n_experts) throw LlepError("routing index out of range");
            for (int j = 0; j < k; ++j) {
                if (routing.index(t, j) == e) throw LlepError("duplicate expert in routing row");
            }
        }
    }
}

SortedDispatch sort_reindex(const TokenBatch& batch, const RouterOutput& routing) {
    if (routing.device_id != batch.device_id) throw LlepError("routing and batch belong to different devices");
    if (routing.top_k < 1) throw LlepError("routing has no slots");
    if (routing.indices.size() != routing.gates.size()) throw LlepError("routing indices/gates length mismatch");
    const std::size_t tokens = batch.tokens.rows();
    const auto k = static_cast<std::size_t>(routing.top_k);
    if (routing.indices.size() != tokens * k) throw LlepError("routing rows do not match batch rows");

    const std::size_t slots = tokens * k;
    SortedDispatch out;
    out.top_k = routing.top_k;
    out.permutation.resize(slots);
    std::iota(out.permutation.begin(), out.permutation.end(), std::size_t{0});
    std::stable_sort(out.permutation.begin(), out.permutation.end(), [&](std::size_t a, std::size_t b) {
        return routing.indices[a] < routing.indices[b];
    });

    out.per_expert_counts.assign(static_cast<std::size_t>(routing.n_experts), 0);
    out.sorted_indices.resize(slots);
    out.sorted_gates.resize(slots);
    out.sorted_tokens = Matrix(slots, batch.tokens.cols());
    for (std::size_t j = 0; j < slots; ++j) {
        const std::size_t flat = out.permutation[j];
        const int e = routing.indices[flat];
        if (e < 0 || e >= routing.n_experts) throw LlepError("routing index out of range");
        out.sorted_indices[j] = e;
        out.sorted_gates[j] = routing.gates[flat];
        auto src = batch.tokens.row(flat / k);
        std::copy(src.begin(), src.end(), out.sorted_tokens.row(j).begin());
        ++out.per_expert_counts[static_cast<std::size_t>(e)];
    }
    return out;
}

Matrix combine_unsort(const Matrix& sorted_outputs, const SortedDispatch& dispatch) {
    const std::size_t slots = dispatch.permutation.size();
    if (sorted_outputs.rows() != slots) throw LlepError("sorted output rows do not match B_p*K");
    const auto k = static_cast<std::size_t>(dispatch.top_k);
    const std::size_t width = sorted_outputs.cols();

    Matrix unsorted(slots, width);
    for (std::size_t j = 0; j < slots; ++j) {
        auto src = sorted_outputs.row(j);
        std::copy(src.begin(), src.end(), unsorted.row(dispatch.permutation[j]).begin());
    }

    const std::size_t tokens = k > 0 ? slots / k : 0;
    Matrix out(tokens, width);
    for (std::size_t t = 0; t < tokens; ++t) {
        auto dst = out.row(t);
        for (std::size_t s = 0; s < k; ++s) {
            auto src = unsorted.row(t * k + s);
            for (std::size_t c = 0; c < width; ++c) dst[c] += src[c];
        }
    }
    return out;
}

}  // namespace llep
