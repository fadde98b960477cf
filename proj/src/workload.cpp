// Copyright (c) 2026, The LLEP Authors
// SPDX-License-Identifier: Apache-2.0

#include "llep/workload.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace llep {

std::string Scenario::id() const {
    if (mode == ScenarioMode::balanced) return "balanced";
    const long pct = std::lround(hot_fraction * 100.0);
    return std::to_string(pct) + "pct_into_" + std::to_string(hot_expert_count);
}

void validate_scenario(const Scenario& s) {
    validate_config(s.config);
    if (s.tokens_per_device < 0) throw LlepError("tokens_per_device must be nonnegative");
    if (s.mode == ScenarioMode::balanced) return;
    if (s.hot_expert_count < 1) throw LlepError("hot_expert_count must be >= 1");
    if (s.hot_expert_count > s.config.n_experts) throw LlepError("hot_expert_count exceeds N");
    if (!(s.hot_fraction > 0.0 && s.hot_fraction < 1.0)) throw LlepError("hot_fraction must be in (0, 1)");
    if (s.hot_expert_count == s.config.n_experts) throw LlepError("no cold experts to absorb the remaining fraction");
}

std::vector<double> target_distribution(const Scenario& s) {
    validate_scenario(s);
    const int n = s.config.n_experts;
    if (s.mode == ScenarioMode::balanced) return std::vector<double>(static_cast<std::size_t>(n), 1.0 / n);
    const int y = s.hot_expert_count;
    std::vector<double> p(static_cast<std::size_t>(n), (1.0 - s.hot_fraction) / (n - y));
    for (int i = 0; i < y; ++i) p[static_cast<std::size_t>(i)] = s.hot_fraction / y;
    return p;
}

std::vector<RoutedBatch> generate_routing(const Scenario& s, const ModelParams* params) {
    const std::vector<double> target = target_distribution(s);
    const int n = s.config.n_experts;
    const int k = s.config.top_k;
    const int positive = static_cast<int>(std::count_if(target.begin(), target.end(), [](double v) { return v > 0.0; }));
    if (k > positive) throw LlepError("K exceeds the number of experts with positive probability");

    const auto rows = static_cast<std::size_t>(s.tokens_per_device);
    const auto d = static_cast<std::size_t>(s.config.d_model);
    std::vector<RoutedBatch> out(static_cast<std::size_t>(s.config.world_size));
    std::vector<double> weights(static_cast<std::size_t>(n));
    for (int p = 0; p < s.config.world_size; ++p) {
        auto& rb = out[static_cast<std::size_t>(p)];
        rb.batch.device_id = p;
        rb.batch.tokens = Matrix(rows, d);
        Rng token_rng = Rng::substream(s.seed, 2 * static_cast<std::uint64_t>(p));
        for (double& v : rb.batch.tokens.data()) v = token_rng.normal();

        if (params != nullptr) {
            rb.routing = route(rb.batch, *params, s.config);
            continue;
        }

        rb.routing.device_id = p;
        rb.routing.n_experts = n;
        rb.routing.top_k = k;
        rb.routing.indices.reserve(rows * static_cast<std::size_t>(k));
        rb.routing.gates.assign(rows * static_cast<std::size_t>(k), 1.0 / k);
        Rng route_rng = Rng::substream(s.seed, 2 * static_cast<std::uint64_t>(p) + 1);
        for (std::size_t t = 0; t < rows; ++t) {
            weights = target;
            double remaining = std::accumulate(weights.begin(), weights.end(), 0.0);
            for (int slot = 0; slot < k; ++slot) {
                const double u = route_rng.uniform() * remaining;
                double acc = 0.0;
                int pick = -1;
                for (int i = 0; i < n; ++i) {
                    const double w = weights[static_cast<std::size_t>(i)];
                    if (w <= 0.0) continue;
                    pick = i;  // last positive candidate absorbs rounding at the tail
                    acc += w;
                    if (u < acc) break;
                }
                rb.routing.indices.push_back(pick);
                remaining -= weights[static_cast<std::size_t>(pick)];
                weights[static_cast<std::size_t>(pick)] = 0.0;
            }
        }
    }
    return out;
}

LoadMatrix scenario_load_matrix(const Scenario& s) {
    const std::vector<double> target = target_distribution(s);
    const std::int64_t slots = s.tokens_per_device * s.config.top_k;
    const auto n = target.size();

    std::vector<std::vector<std::int64_t>> rows(static_cast<std::size_t>(s.config.world_size));
    for (int p = 0; p < s.config.world_size; ++p) {
        // Multinomial draw as a chain of conditional binomials.
        Rng rng = Rng::substream(s.seed ^ 0x4c4f414453ULL, static_cast<std::uint64_t>(p));
        auto& row = rows[static_cast<std::size_t>(p)];
        row.assign(n, 0);
        std::int64_t left = slots;
        double mass = 1.0;
        for (std::size_t i = 0; i < n && left > 0; ++i) {
            if (i + 1 == n || mass <= target[i]) {
                row[i] = left;
                left = 0;
                break;
            }
            const double q = std::clamp(target[i] / mass, 0.0, 1.0);
            row[i] = std::binomial_distribution<std::int64_t>(left, q)(rng.engine());
            left -= row[i];
            mass -= target[i];
        }
    }
    return gather_loads(rows, s.config);
}

LoadMatrix count_loads(const std::vector<RoutedBatch>& routed, int n_experts) {
    std::vector<std::vector<std::int64_t>> rows;
    rows.reserve(routed.size());
    for (const auto& rb : routed) {
        std::vector<std::int64_t> row(static_cast<std::size_t>(n_experts), 0);
        for (int e : rb.routing.indices) ++row[static_cast<std::size_t>(e)];
        rows.push_back(std::move(row));
    }
    return gather_loads(rows);
}

std::vector<TraceRecord> parse_trace(const std::string& text, const MoeConfig& config) {
    validate_config(config);
    const auto n = static_cast<std::size_t>(config.n_experts);
    const auto world = static_cast<std::size_t>(config.world_size);

    std::vector<TraceRecord> out;
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        const auto first = line.find_first_not_of(" \t");
        if (first == std::string::npos || line[first] == '#') continue;

        auto fail = [&](const std::string& why) {
            throw LlepError("trace line " + std::to_string(line_no) + ": " + why);
        };
        std::vector<std::string> fields;
        std::stringstream ls(line);
        std::string field;
        while (std::getline(ls, field, ',')) {
            const auto b = field.find_first_not_of(" \t");
            const auto e = field.find_last_not_of(" \t");
            fields.push_back(b == std::string::npos ? std::string() : field.substr(b, e - b + 1));
        }
        if (fields.empty() || fields.front().empty()) fail("missing record id");

        std::vector<std::int64_t> values;
        for (std::size_t i = 1; i < fields.size(); ++i) {
            const auto& f = fields[i];
            if (f.empty()) fail("empty count field");
            std::size_t used = 0;
            long long v = 0;
            try {
                v = std::stoll(f, &used);
            } catch (const std::exception&) {
                fail("malformed count '" + f + "'");
            }
            if (used != f.size()) fail("malformed count '" + f + "'");
            if (v < 0) fail("negative count");
            values.push_back(v);
        }

        std::vector<std::vector<std::int64_t>> rows(world, std::vector<std::int64_t>(n, 0));
        if (values.size() == n) {
            rows[0] = values;
        } else if (values.size() == n * world) {
            for (std::size_t p = 0; p < world; ++p) {
                std::copy_n(values.begin() + static_cast<std::ptrdiff_t>(p * n), n, rows[p].begin());
            }
        } else {
            fail("expected " + std::to_string(n) + " or " + std::to_string(n * world) + " counts, got " +
                 std::to_string(values.size()));
        }
        out.push_back({fields.front(), gather_loads(rows, config)});
    }
    return out;
}

std::vector<TraceRecord> load_trace(const std::string& path, const MoeConfig& config) {
    std::ifstream in(path);
    if (!in) throw LlepError("cannot open trace file " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_trace(ss.str(), config);
}

std::string format_trace_record(const std::string& record_id, const LoadMatrix& loads) {
    std::string line = record_id;
    for (const auto& row : loads.counts) {
        for (auto c : row) line += "," + std::to_string(c);
    }
    return line;
}

}  // namespace llep
