// Copyright (c) 2026, The LLEP Authors
// SPDX-License-Identifier: Apache-2.0

#include "llep/planner.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace llep {

namespace {

std::vector<int> descending_load_order(std::span<const std::int64_t> loads) {
    std::vector<int> order(loads.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return loads[static_cast<std::size_t>(a)] > loads[static_cast<std::size_t>(b)];
    });
    return order;
}

// floor(capacity - assigned - pending), saturated to int64 range.
std::int64_t floored_availability(const SpillState& s, int device) {
    const auto d = static_cast<std::size_t>(device);
    return static_cast<std::int64_t>(
        std::floor(s.capacity - static_cast<double>(s.assigned[d]) - static_cast<double>(s.pending[d])));
}

void check_loads(std::span<const std::int64_t> loads, const MoeConfig& config) {
    if (static_cast<int>(loads.size()) != config.n_experts) throw LlepError("load vector length does not match N");
    for (auto v : loads) {
        if (v < 0) throw LlepError("negative expert load");
    }
}

}  // namespace

std::int64_t LoadMatrix::total() const {
    return std::accumulate(global_loads.begin(), global_loads.end(), std::int64_t{0});
}

LoadMatrix gather_loads(std::span<const std::vector<std::int64_t>> per_device_counts) {
    LoadMatrix out;
    if (per_device_counts.empty()) return out;
    const std::size_t n = per_device_counts.front().size();
    out.global_loads.assign(n, 0);
    for (const auto& row : per_device_counts) {
        if (row.size() != n) throw LlepError("per-device count vectors differ in length");
        for (std::size_t i = 0; i < n; ++i) {
            if (row[i] < 0) throw LlepError("negative expert count");
            out.global_loads[i] += row[i];
        }
        out.counts.push_back(row);
    }
    return out;
}

LoadMatrix gather_loads(std::span<const std::vector<std::int64_t>> per_device_counts, const MoeConfig& config) {
    if (static_cast<int>(per_device_counts.size()) != config.world_size) {
        throw LlepError("expected one count vector per device");
    }
    for (const auto& row : per_device_counts) {
        if (static_cast<int>(row.size()) != config.n_experts) throw LlepError("count vector length does not match N");
    }
    return gather_loads(per_device_counts);
}

double imbalance_ratio(std::span<const std::int64_t> loads) {
    if (loads.empty()) return 1.0;
    const double total = static_cast<double>(std::accumulate(loads.begin(), loads.end(), std::int64_t{0}));
    const double mean = total / static_cast<double>(loads.size());
    if (mean <= 0.0) return 1.0;
    return static_cast<double>(*std::max_element(loads.begin(), loads.end())) / mean;
}

bool is_balanced(std::span<const std::int64_t> loads, double lambda) {
    return imbalance_ratio(loads) < lambda;
}

void llas_spill(SpillState& state, int native_device, std::int64_t remaining, std::int64_t offset,
                std::vector<Chunk>& chunks) {
    const int world = static_cast<int>(state.assigned.size());
    if (remaining <= 0) return;
    if (world <= 1) throw LlepError("spill with world size 1");

    std::vector<int> candidates;
    candidates.reserve(static_cast<std::size_t>(world - 1));
    while (remaining > 0) {
        candidates.clear();
        for (int g = 0; g < world; ++g) {
            if (g != native_device) candidates.push_back(g);
        }
        std::stable_sort(candidates.begin(), candidates.end(), [&](int a, int b) {
            const auto ua = static_cast<std::size_t>(a);
            const auto ub = static_cast<std::size_t>(b);
            return state.assigned[ua] + state.pending[ua] < state.assigned[ub] + state.pending[ub];
        });

        bool accepted = false;
        for (int o : candidates) {
            const std::int64_t c = std::min(remaining, floored_availability(state, o));
            if (c <= 0) continue;                            // already at or over capacity
            if (c < state.min_chunk && remaining > c) continue;  // chunk too small, not the last one
            chunks.push_back({o, offset, offset + c});
            state.assigned[static_cast<std::size_t>(o)] += c;
            remaining -= c;
            offset += c;
            accepted = true;
            break;
        }
        if (!accepted) {
            // Nobody can take a worthwhile chunk: the least-loaded candidate takes it all.
            const int o = candidates.front();
            chunks.push_back({o, offset, offset + remaining});
            state.assigned[static_cast<std::size_t>(o)] += remaining;
            offset += remaining;
            remaining = 0;
            ++state.force_count;
        }
    }
}

std::pair<AssignmentPlan, WeightTransferPlan> lla_plan(std::span<const std::int64_t> loads, const MoeConfig& config,
                                                       const PlannerConfig& planner) {
    validate_config(config, planner);
    check_loads(loads, config);

    const auto world = static_cast<std::size_t>(config.world_size);
    const std::int64_t total = std::accumulate(loads.begin(), loads.end(), std::int64_t{0});

    std::vector<std::int64_t> native_load(world, 0);
    for (int i = 0; i < config.n_experts; ++i) {
        native_load[static_cast<std::size_t>(config.native_device(i))] += loads[static_cast<std::size_t>(i)];
    }

    SpillState state;
    state.pending = native_load;
    state.assigned.assign(world, 0);
    state.capacity = planner.alpha * static_cast<double>(total) / static_cast<double>(config.world_size);
    state.min_chunk = planner.min_chunk;

    AssignmentPlan plan;
    plan.per_expert.resize(static_cast<std::size_t>(config.n_experts));

    for (int expert : descending_load_order(loads)) {
        const std::int64_t load = loads[static_cast<std::size_t>(expert)];
        if (load == 0) continue;
        const int ng = config.native_device(expert);
        const auto ngi = static_cast<std::size_t>(ng);
        auto& chunks = plan.per_expert[static_cast<std::size_t>(expert)];

        state.pending[ngi] -= load;
        const double native_avail =
            state.capacity - static_cast<double>(state.assigned[ngi]) - static_cast<double>(state.pending[ngi]);

        if (native_avail >= static_cast<double>(load)) {
            chunks.push_back({ng, 0, load});
            state.assigned[ngi] += load;
            continue;
        }

        // A fractional availability below one token cannot hold a chunk.
        const std::int64_t native_chunk =
            native_avail > 0.0 ? std::min(static_cast<std::int64_t>(std::floor(native_avail)), load) : 0;
        if (native_chunk > 0) {
            chunks.push_back({ng, 0, native_chunk});
            state.assigned[ngi] += native_chunk;
            llas_spill(state, ng, load - native_chunk, native_chunk, chunks);
        } else {
            llas_spill(state, ng, load, 0, chunks);
        }
    }

    plan.assigned_load = state.assigned;
    plan.capacity = state.capacity;
    plan.force_count = state.force_count;
    WeightTransferPlan transfers = build_weight_transfers(plan, config);
    return {std::move(plan), std::move(transfers)};
}

AssignmentPlan native_plan(std::span<const std::int64_t> loads, const MoeConfig& config) {
    validate_config(config);
    check_loads(loads, config);
    AssignmentPlan plan;
    plan.per_expert.resize(static_cast<std::size_t>(config.n_experts));
    plan.assigned_load.assign(static_cast<std::size_t>(config.world_size), 0);
    std::int64_t total = 0;
    for (int i = 0; i < config.n_experts; ++i) {
        const std::int64_t load = loads[static_cast<std::size_t>(i)];
        total += load;
        if (load == 0) continue;
        const int ng = config.native_device(i);
        plan.per_expert[static_cast<std::size_t>(i)].push_back({ng, 0, load});
        plan.assigned_load[static_cast<std::size_t>(ng)] += load;
    }
    plan.capacity = static_cast<double>(total) / static_cast<double>(config.world_size);
    return plan;
}

WeightTransferPlan build_weight_transfers(const AssignmentPlan& plan, const MoeConfig& config) {
    WeightTransferPlan out;
    for (std::size_t i = 0; i < plan.per_expert.size(); ++i) {
        const int expert = static_cast<int>(i);
        const int ng = config.native_device(expert);
        for (const auto& c : plan.per_expert[i]) {
            if (c.device != ng) out.transfers.push_back({expert, ng, c.device});
        }
    }
    std::sort(out.transfers.begin(), out.transfers.end());
    out.transfers.erase(std::unique(out.transfers.begin(), out.transfers.end()), out.transfers.end());
    return out;
}

std::vector<std::string> check_plan_invariants(const AssignmentPlan& plan, const WeightTransferPlan& transfers,
                                               std::span<const std::int64_t> loads, const MoeConfig& config) {
    std::vector<std::string> violations;
    auto flag = [&](const char* name) {
        if (std::find(violations.begin(), violations.end(), name) == violations.end()) violations.emplace_back(name);
    };

    const auto world = static_cast<std::size_t>(config.world_size);
    if (plan.per_expert.size() != loads.size() || plan.assigned_load.size() != world) {
        flag("coverage");
        return violations;
    }

    std::vector<std::int64_t> per_device(world, 0);
    for (std::size_t i = 0; i < loads.size(); ++i) {
        const auto& chunks = plan.per_expert[i];
        std::int64_t cursor = 0;
        std::int64_t covered = 0;
        for (const auto& c : chunks) {
            if (c.start != cursor || c.end <= c.start) flag("contiguity");
            if (c.device < 0 || c.device >= config.world_size) {
                flag("coverage");
                continue;
            }
            covered += c.size();
            cursor = c.end;
            per_device[static_cast<std::size_t>(c.device)] += c.size();
        }
        if (covered != loads[i] || cursor != loads[i]) flag("coverage");
    }

    const std::int64_t total = std::accumulate(loads.begin(), loads.end(), std::int64_t{0});
    const std::int64_t assigned_total =
        std::accumulate(plan.assigned_load.begin(), plan.assigned_load.end(), std::int64_t{0});
    if (assigned_total != total || per_device != plan.assigned_load) flag("conservation");

    if (plan.force_count == 0) {
        const auto cap = static_cast<std::int64_t>(std::ceil(plan.capacity));
        for (auto g : plan.assigned_load) {
            if (g > cap) flag("capacity");
        }
    }

    // Replay the heaviest-first walk to know each native device's availability at the
    // moment its expert was placed.
    std::vector<std::int64_t> pending(world, 0);
    std::vector<std::int64_t> assigned(world, 0);
    for (std::size_t i = 0; i < loads.size(); ++i) pending[static_cast<std::size_t>(config.native_device(static_cast<int>(i)))] += loads[i];
    for (int expert : descending_load_order(loads)) {
        const auto ei = static_cast<std::size_t>(expert);
        if (loads[ei] == 0) continue;
        const auto ng = static_cast<std::size_t>(config.native_device(expert));
        pending[ng] -= loads[ei];
        const double avail = std::floor(plan.capacity - static_cast<double>(assigned[ng]) - static_cast<double>(pending[ng]));
        const auto& chunks = plan.per_expert[ei];
        if (avail >= 1.0 && (chunks.empty() || chunks.front().device != static_cast<int>(ng) || chunks.front().start != 0)) {
            flag("native-first");
        }
        for (const auto& c : chunks) {
            if (c.device >= 0 && c.device < config.world_size) assigned[static_cast<std::size_t>(c.device)] += c.size();
        }
    }

    if (transfers != build_weight_transfers(plan, config)) flag("weight-plan-soundness");
    for (const auto& t : transfers.transfers) {
        if (t.src_device != config.native_device(t.expert) || t.dst_device == t.src_device) flag("weight-plan-soundness");
    }
    return violations;
}

}  // namespace llep
