// Copyright (c) 2026, The LLEP Authors
// SPDX-License-Identifier: Apache-2.0

#include "llep/simexec.hpp"

#include <algorithm>
#include <map>
#include <tuple>

#include "exchange.hpp"

namespace llep {

namespace {

constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;
constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;

void fnv_mix(std::uint64_t& h, std::uint64_t v) {
    for (int b = 0; b < 8; ++b) {
        h ^= (v >> (8 * b)) & 0xffU;
        h *= kFnvPrime;
    }
}

ExecResult run_step(std::span<const TokenBatch> batches, std::span<const RouterOutput> routings,
                    const ModelParams& params, const MoeConfig& config, const PlannerConfig* planner,
                    const ExecOptions& options) {
    detail::StepRunner runner(batches, routings, params, config, options);
    runner.sort_local();
    const LoadMatrix loads = runner.gather();
    const double ratio = imbalance_ratio(loads.global_loads);
    const bool use_lla = planner != nullptr && !is_balanced(loads.global_loads, planner->lambda);
    runner.plan_everywhere(loads, planner != nullptr ? *planner : PlannerConfig{}, use_lla);
    runner.dispatch();
    runner.import_weights();

    const int world = config.world_size;
    const auto h = static_cast<std::size_t>(config.d_hidden);

    // Staged outputs travelling back: [src][executing device] -> (expert, local_start, rows)
    struct Returned {
        int expert;
        std::int64_t local_start;
        Matrix rows;
    };
    std::vector<std::vector<std::vector<Returned>>> outbox(static_cast<std::size_t>(world),
                                                           std::vector<std::vector<Returned>>(static_cast<std::size_t>(world)));

    detail::for_each_device(world, options.mode, [&](int dev) {
        for (auto& work : runner.assemble(dev)) {
            const Matrix& w = runner.weights_for(dev, work.expert);
            Matrix out = matmul(work.tokens, w);
            for (std::size_t r = 0; r < out.rows(); ++r) {
                for (double& v : out.row(r)) v *= work.gates[r];
            }
            runner.record_gemm(dev, {work.expert, static_cast<std::int64_t>(out.rows()), work.foreign});

            std::size_t r0 = 0;
            for (const auto* part : work.parts) {
                const std::size_t n = part->tokens.rows();
                Matrix slice(n, h);
                for (std::size_t i = 0; i < n; ++i) {
                    auto src = out.row(r0 + i);
                    std::copy(src.begin(), src.end(), slice.row(i).begin());
                }
                r0 += n;
                if (part->src != dev) {
                    runner.record_message(dev, {MessageKind::combine, dev, part->src, work.expert,
                                                static_cast<std::int64_t>(n), static_cast<std::int64_t>(n * h)});
                }
                outbox[static_cast<std::size_t>(part->src)][static_cast<std::size_t>(dev)].push_back(
                    {work.expert, part->local_start, std::move(slice)});
            }
        }
    });

    ExecResult result;
    result.outputs.resize(static_cast<std::size_t>(world));
    detail::for_each_device(world, options.mode, [&](int p) {
        const auto pi = static_cast<std::size_t>(p);
        const auto& sorted = runner.sorted(p);
        const auto offsets = sorted.expert_offsets();
        Matrix staged(sorted.permutation.size(), h);
        std::size_t filled = 0;
        for (int dev = 0; dev < world; ++dev) {
            for (const auto& ret : outbox[pi][static_cast<std::size_t>(dev)]) {
                const auto base = static_cast<std::size_t>(offsets[static_cast<std::size_t>(ret.expert)] + ret.local_start);
                for (std::size_t i = 0; i < ret.rows.rows(); ++i) {
                    auto src = ret.rows.row(i);
                    std::copy(src.begin(), src.end(), staged.row(base + i).begin());
                }
                filled += ret.rows.rows();
            }
        }
        if (filled != staged.rows()) throw LlepError("combine did not return every dispatched row");
        result.outputs[pi] = combine_unsort(staged, sorted);
    });
    runner.clear_imports();

    result.balanced_fallback = planner != nullptr && !use_lla;
    result.plan = runner.plan();
    result.transfers = runner.transfers();
    result.schedule = runner.schedule();
    result.loads = loads;
    result.metrics = runner.collect_metrics(use_lla, ratio);
    result.rows_sent = runner.rows_sent();
    result.rows_received = runner.rows_received();
    return result;
}

}  // namespace

const char* to_string(Method method) { return method == Method::ep ? "ep" : "llep"; }

std::uint64_t workload_fingerprint(const LoadMatrix& loads, const MoeConfig& config) {
    std::uint64_t h = kFnvOffset;
    for (int v : {config.n_experts, config.top_k, config.d_model, config.d_hidden, config.world_size}) {
        fnv_mix(h, static_cast<std::uint64_t>(v));
    }
    for (const auto& row : loads.counts) {
        for (auto c : row) fnv_mix(h, static_cast<std::uint64_t>(c));
    }
    return h;
}

StepMetrics step_metrics(const LoadMatrix& loads, const AssignmentPlan& plan, const DeviceSendSchedule& schedule,
                         const WeightTransferPlan& transfers, const MoeConfig& config, bool used_lla) {
    const auto world = static_cast<std::size_t>(config.world_size);
    const auto d = static_cast<std::int64_t>(config.d_model);
    const auto h = static_cast<std::int64_t>(config.d_hidden);

    StepMetrics m;
    m.config = config;
    m.used_lla = used_lla;
    m.imbalance_ratio = imbalance_ratio(loads.global_loads);
    m.fingerprint = workload_fingerprint(loads, config);
    m.gemms.resize(world);
    m.imports.resize(world);
    m.tokens_executed.assign(world, 0);

    for (std::size_t i = 0; i < plan.per_expert.size(); ++i) {
        const int expert = static_cast<int>(i);
        std::vector<std::int64_t> rows(world, 0);
        for (const auto& c : plan.per_expert[i]) rows[static_cast<std::size_t>(c.device)] += c.size();
        for (std::size_t p = 0; p < world; ++p) {
            if (rows[p] == 0) continue;
            m.gemms[p].push_back({expert, rows[p], config.native_device(expert) != static_cast<int>(p)});
            m.tokens_executed[p] += rows[p];
        }
    }

    for (std::size_t p = 0; p < schedule.per_source.size(); ++p) {
        const int src = static_cast<int>(p);
        for (const auto& s : schedule.per_source[p]) {
            if (s.dst_device == src) continue;
            m.messages.push_back({MessageKind::dispatch, src, s.dst_device, s.expert, s.size(), s.size() * (d + 1)});
            m.messages.push_back({MessageKind::combine, s.dst_device, src, s.expert, s.size(), s.size() * h});
        }
    }
    for (const auto& t : transfers.transfers) {
        m.messages.push_back({MessageKind::weight, t.src_device, t.dst_device, t.expert, 1, d * h});
        m.imports[static_cast<std::size_t>(t.dst_device)].push_back(t.expert);
    }
    for (auto& s : m.imports) std::sort(s.begin(), s.end());
    m.messages = coalesce_messages(std::move(m.messages));
    return m;
}

std::vector<Message> coalesce_messages(std::vector<Message> raw) {
    std::vector<Message> out;
    std::map<std::tuple<MessageKind, int, int>, std::size_t> pair_index;
    for (const auto& msg : raw) {
        if (msg.kind == MessageKind::weight) {
            out.push_back(msg);
            continue;
        }
        auto [it, inserted] = pair_index.try_emplace({msg.kind, msg.src, msg.dst}, out.size());
        if (inserted) {
            out.push_back({msg.kind, msg.src, msg.dst, -1, 0, 0});
        }
        out[it->second].rows += msg.rows;
        out[it->second].elements += msg.elements;
    }
    std::sort(out.begin(), out.end(), [](const Message& a, const Message& b) {
        return std::tie(a.kind, a.src, a.dst, a.expert) < std::tie(b.kind, b.src, b.dst, b.expert);
    });
    return out;
}

PlannedStep plan_step(const LoadMatrix& loads, const MoeConfig& config, const PlannerConfig& planner, Method method) {
    validate_config(config, planner);
    if (loads.world_size() != config.world_size || loads.n_experts() != config.n_experts) {
        throw LlepError("load matrix shape does not match config");
    }
    PlannedStep step;
    step.method = method;
    const bool use_lla = method == Method::llep && !is_balanced(loads.global_loads, planner.lambda);
    step.balanced_fallback = method == Method::llep && !use_lla;
    if (use_lla) {
        std::tie(step.plan, step.transfers) = lla_plan(loads.global_loads, config, planner);
    } else {
        step.plan = native_plan(loads.global_loads, config);
    }
    step.schedule = materialize_send_schedule(step.plan, loads, config);
    step.metrics = step_metrics(loads, step.plan, step.schedule, step.transfers, config, use_lla);
    return step;
}

std::vector<Matrix> reference_forward(std::span<const TokenBatch> batches, std::span<const RouterOutput> routings,
                                      const ModelParams& params, const MoeConfig& config) {
    detail::check_inputs(batches, routings, config);
    const auto h = static_cast<std::size_t>(config.d_hidden);
    std::vector<Matrix> outputs;
    outputs.reserve(batches.size());
    for (std::size_t p = 0; p < batches.size(); ++p) {
        const auto& tokens = batches[p].tokens;
        const auto& routing = routings[p];
        Matrix out(tokens.rows(), h);
        for (std::size_t t = 0; t < tokens.rows(); ++t) {
            auto u = tokens.row(t);
            auto dst = out.row(t);
            for (int k = 0; k < config.top_k; ++k) {
                const auto& w = params.expert_weights[static_cast<std::size_t>(routing.index(t, k))];
                const double g = routing.gate(t, k);
                std::vector<double> y(h, 0.0);
                for (std::size_t a = 0; a < u.size(); ++a) {
                    auto wrow = w.row(a);
                    for (std::size_t b = 0; b < h; ++b) y[b] += u[a] * wrow[b];
                }
                for (std::size_t b = 0; b < h; ++b) dst[b] += g * y[b];
            }
        }
        outputs.push_back(std::move(out));
    }
    return outputs;
}

std::vector<Matrix> reference_forward(std::span<const TokenBatch> batches, const ModelParams& params,
                                      const MoeConfig& config) {
    std::vector<RouterOutput> routings;
    routings.reserve(batches.size());
    for (const auto& b : batches) routings.push_back(route(b, params, config));
    return reference_forward(batches, routings, params, config);
}

ExecResult ep_dispatch_combine(std::span<const TokenBatch> batches, std::span<const RouterOutput> routings,
                               const ModelParams& params, const MoeConfig& config, const ExecOptions& options) {
    return run_step(batches, routings, params, config, nullptr, options);
}

ExecResult llep_dispatch_combine(std::span<const TokenBatch> batches, std::span<const RouterOutput> routings,
                                 const ModelParams& params, const MoeConfig& config, const PlannerConfig& planner,
                                 const ExecOptions& options) {
    validate_config(config, planner);
    {
        // Balanced routing takes the standard EP path unchanged.
        std::vector<std::int64_t> loads(static_cast<std::size_t>(config.n_experts), 0);
        detail::check_inputs(batches, routings, config);
        for (const auto& r : routings) {
            for (int e : r.indices) ++loads[static_cast<std::size_t>(e)];
        }
        if (is_balanced(loads, planner.lambda)) {
            ExecResult result = ep_dispatch_combine(batches, routings, params, config, options);
            result.balanced_fallback = true;
            return result;
        }
    }
    return run_step(batches, routings, params, config, &planner, options);
}

}  // namespace llep
