// Copyright (c) 2026, The LLEP Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>

#include "llep/planner.hpp"

namespace llep {

DeviceSendSchedule materialize_send_schedule(const AssignmentPlan& plan, const LoadMatrix& loads,
                                             const MoeConfig& config) {
    const int world = config.world_size;
    const int n = config.n_experts;
    if (loads.world_size() != world || loads.n_experts() != n || static_cast<int>(plan.per_expert.size()) != n) {
        throw LlepError("plan and loads disagree on N or P");
    }

    DeviceSendSchedule out;
    out.per_source.resize(static_cast<std::size_t>(world));
    out.foreign_experts.resize(static_cast<std::size_t>(world));

    for (int i = 0; i < n; ++i) {
        const auto ei = static_cast<std::size_t>(i);
        const auto& chunks = plan.per_expert[ei];
        std::int64_t covered = 0;
        std::int64_t cursor = 0;
        for (const auto& c : chunks) {
            if (c.start != cursor || c.end <= c.start || c.device < 0 || c.device >= world) {
                throw LlepError("plan chunks for expert " + std::to_string(i) + " are not contiguous");
            }
            cursor = c.end;
            covered += c.size();
        }
        if (covered != loads.global_loads[ei]) {
            throw LlepError("plan covers " + std::to_string(covered) + " tokens of expert " + std::to_string(i) +
                            " but its load is " + std::to_string(loads.global_loads[ei]));
        }

        // Source p owns global range [base, base + counts[p][i]).
        std::int64_t base = 0;
        for (int p = 0; p < world; ++p) {
            const std::int64_t count = loads.counts[static_cast<std::size_t>(p)][ei];
            const std::int64_t lo = base;
            const std::int64_t hi = base + count;
            for (const auto& c : chunks) {
                const std::int64_t s = std::max(lo, c.start);
                const std::int64_t e = std::min(hi, c.end);
                if (s < e) out.per_source[static_cast<std::size_t>(p)].push_back({i, c.device, s - lo, e - lo});
            }
            base = hi;
        }

        const int ng = config.native_device(i);
        for (const auto& c : chunks) {
            auto& foreign = out.foreign_experts[static_cast<std::size_t>(c.device)];
            if (c.device != ng && (foreign.empty() || foreign.back() != i)) foreign.push_back(i);
        }
    }
    return out;
}

}  // namespace llep
