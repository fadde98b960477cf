// Copyright (c) 2026, The LLEP Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <tuple>

#include "exchange.hpp"
#include "llep/simexec.hpp"

namespace llep {

namespace {

void check_upstream(std::span<const TokenBatch> batches, std::span<const Matrix> upstream, const MoeConfig& config) {
    if (upstream.size() != batches.size()) throw LlepError("expected one upstream gradient per device");
    for (std::size_t p = 0; p < batches.size(); ++p) {
        const auto rows = batches[p].tokens.rows();
        if (upstream[p].rows() != rows || (rows > 0 && upstream[p].cols() != static_cast<std::size_t>(config.d_hidden))) {
            throw LlepError("upstream gradient shape does not match forward output");
        }
    }
}

// grad += sum_r gate_r * u_r (x) dh_r
void accumulate_outer(Matrix& grad, const Matrix& tokens, std::span<const double> gates, const Matrix& upstream) {
    for (std::size_t r = 0; r < tokens.rows(); ++r) {
        auto u = tokens.row(r);
        auto dh = upstream.row(r);
        for (std::size_t a = 0; a < u.size(); ++a) {
            const double gu = gates[r] * u[a];
            auto out = grad.row(a);
            for (std::size_t b = 0; b < dh.size(); ++b) out[b] += gu * dh[b];
        }
    }
}

}  // namespace

BackwardResult backward_weights(std::span<const TokenBatch> batches, std::span<const RouterOutput> routings,
                                const ModelParams& params, const MoeConfig& config, const PlannerConfig& planner,
                                std::span<const Matrix> upstream_grads, Method method, const ExecOptions& options) {
    validate_config(config, planner);
    check_upstream(batches, upstream_grads, config);

    detail::StepRunner runner(batches, routings, params, config, options);
    runner.sort_local();
    const LoadMatrix loads = runner.gather();
    const bool use_lla = method == Method::llep && !is_balanced(loads.global_loads, planner.lambda);
    runner.plan_everywhere(loads, planner, use_lla);
    runner.dispatch(upstream_grads);

    const int world = config.world_size;
    const auto d = static_cast<std::size_t>(config.d_model);
    const auto h = static_cast<std::size_t>(config.d_hidden);

    // [device] -> partial gradients for every expert that executed there
    std::vector<std::vector<PartialGradient>> computed(static_cast<std::size_t>(world));
    detail::for_each_device(world, options.mode, [&](int dev) {
        for (const auto& work : runner.assemble(dev)) {
            Matrix grad(d, h);
            accumulate_outer(grad, work.tokens, work.gates, work.upstream);
            computed[static_cast<std::size_t>(dev)].push_back({work.expert, dev, std::move(grad)});
        }
    });

    BackwardResult result;
    for (auto& per_device : computed) {
        for (auto& pg : per_device) {
            if (config.native_device(pg.expert) != pg.device) ++result.gradients_returned;
            result.partials.push_back(std::move(pg));
        }
    }
    std::sort(result.partials.begin(), result.partials.end(), [](const PartialGradient& a, const PartialGradient& b) {
        return std::tie(a.expert, a.device) < std::tie(b.expert, b.device);
    });

    // Native devices sum their own and returned partials in ascending device rank.
    result.accumulated.grads.assign(static_cast<std::size_t>(config.n_experts), Matrix(d, h));
    detail::for_each_device(world, options.mode, [&](int native) {
        for (const auto& pg : result.partials) {
            if (config.native_device(pg.expert) != native) continue;
            auto acc = result.accumulated.grads[static_cast<std::size_t>(pg.expert)].data();
            auto src = pg.grad.data();
            for (std::size_t j = 0; j < acc.size(); ++j) acc[j] += src[j];
        }
    });

    result.plan = runner.plan();
    result.transfers = runner.transfers();
    return result;
}

std::vector<Matrix> reference_weight_gradients(std::span<const TokenBatch> batches,
                                               std::span<const RouterOutput> routings, const MoeConfig& config,
                                               std::span<const Matrix> upstream_grads) {
    detail::check_inputs(batches, routings, config);
    check_upstream(batches, upstream_grads, config);
    const auto d = static_cast<std::size_t>(config.d_model);
    const auto h = static_cast<std::size_t>(config.d_hidden);
    std::vector<Matrix> grads(static_cast<std::size_t>(config.n_experts), Matrix(d, h));
    for (std::size_t p = 0; p < batches.size(); ++p) {
        const auto& tokens = batches[p].tokens;
        for (std::size_t t = 0; t < tokens.rows(); ++t) {
            auto u = tokens.row(t);
            auto dh = upstream_grads[p].row(t);
            for (int k = 0; k < config.top_k; ++k) {
                auto& grad = grads[static_cast<std::size_t>(routings[p].index(t, k))];
                const double g = routings[p].gate(t, k);
                for (std::size_t a = 0; a < d; ++a) {
                    auto out = grad.row(a);
                    for (std::size_t b = 0; b < h; ++b) out[b] += g * u[a] * dh[b];
                }
            }
        }
    }
    return grads;
}

}  // namespace llep
