// Copyright (c) 2026, The LLEP Authors
// SPDX-License-Identifier: Apache-2.0

#include "catch_amalgamated.hpp"

#include <cstdio>
#include <fstream>

#include "llep/costmodel.hpp"
#include "llep/workload.hpp"
#include "oracles.hpp"

using namespace llep;
using Catch::Approx;
using Catch::Matchers::ContainsSubstring;

namespace {

LoadMatrix rows_of(const std::vector<std::vector<std::int64_t>>& rows, const MoeConfig& c) {
    return gather_loads(std::span<const std::vector<std::int64_t>>(rows), c);
}

StepMetrics step(const std::vector<std::vector<std::int64_t>>& rows, const MoeConfig& c, Method m,
                 const PlannerConfig& pc = PlannerConfig{1.0, 1, 1.3}) {
    return plan_step(rows_of(rows, c), c, pc, m).metrics;
}

}  // namespace

TEST_CASE("gemm_time follows the launch plus ramped throughput model", "[costmodel]") {
    const CostParams p = cost_profile("h200");
    CHECK(gemm_time(0, 64, 64, p) == 0.0);
    const auto sat = static_cast<std::int64_t>(p.eff_saturation_batch);
    CHECK(gemm_time(sat, 64, 32, p) == Approx(p.t_launch + 2.0 * sat * 64 * 32 / p.flops_rate).epsilon(1e-14));
    const double flop_big = gemm_time(4 * sat, 16, 16, p) - p.t_launch;
    const double flop_half = gemm_time(2 * sat, 16, 16, p) - p.t_launch;
    CHECK(flop_half == Approx(flop_big / 2.0).epsilon(1e-12));
    for (std::int64_t b : {1, 7, 100, 2000, 4095, 9000}) {
        CHECK(gemm_time(b, 128, 64, p) == Approx(oracle::gemm_seconds(static_cast<double>(b), 128, 64, p)).epsilon(1e-14));
    }
    double prev = 0.0;
    for (std::int64_t b = 0; b <= 10000; b += 37) {
        const double t = gemm_time(b, 32, 32, p);
        CHECK(t >= prev);
        prev = t;
    }
    CHECK(gemm_efficiency(1, p) == Approx(p.eff_floor + (1 - p.eff_floor) / p.eff_saturation_batch));
}

TEST_CASE("comm_time is latency plus volume over bandwidth", "[costmodel]") {
    const CostParams p = cost_profile("h200");
    CHECK(comm_time(0, p) == 0.0);
    CHECK(comm_time(p.link_bandwidth, p) == Approx(p.link_latency + 1.0).epsilon(1e-15));
    const double w = 2048.0 * 2048.0 * p.dtype_bytes;
    CHECK(comm_time(w, p) == Approx(oracle::link_seconds(w, p)).epsilon(1e-15));
    CHECK(comm_time(w, p) < comm_time(2 * w, p));
}

TEST_CASE("device_time sums GEMMs and every message the device touches", "[costmodel]") {
    const CostParams p = cost_profile("h200");
    SECTION("idle device") {
        const MoeConfig c{4, 1, 8, 8, 2};
        const StepMetrics m = step({{0, 0, 0, 0}, {0, 0, 3, 0}}, c, Method::ep);
        CHECK(device_time(m, 0, p).total() == 0.0);
    }
    SECTION("one device, no communication") {
        const MoeConfig c{2, 1, 8, 4, 1};
        const StepMetrics m = step({{9, 0}}, c, Method::ep);
        const DeviceTime t = device_time(m, 0, p);
        CHECK(t.comm_seconds == 0.0);
        CHECK(t.compute_seconds == Approx(oracle::gemm_seconds(9, 8, 4, p)).epsilon(1e-14));
    }
    SECTION("spill target of the single hot expert") {
        const MoeConfig c{4, 1, 16, 8, 2};
        const StepMetrics m = step({{10, 0, 0, 0}, {0, 0, 0, 0}}, c, Method::llep);
        const double expect = oracle::link_seconds(16.0 * 8.0 * p.dtype_bytes, p) +
                              oracle::link_seconds(5.0 * (16 + 1) * p.dtype_bytes, p) +
                              oracle::link_seconds(5.0 * 8 * p.dtype_bytes, p) + oracle::gemm_seconds(5, 16, 8, p);
        CHECK(device_time(m, 1, p).total() == Approx(expect).epsilon(1e-12));
        CHECK(device_time(m, 1, p).compute_seconds == Approx(oracle::gemm_seconds(5, 16, 8, p)).epsilon(1e-14));
    }
}

TEST_CASE("peak_memory counts activations and resident weights", "[costmodel]") {
    const CostParams p = cost_profile("h200");
    const MoeConfig one{1, 1, 3, 4, 1};
    CHECK(peak_memory(step({{2}}, one, Method::ep), 0, p) == 26.0 * p.dtype_bytes);

    const MoeConfig c{4, 1, 3, 4, 2};
    CHECK(peak_memory(step({{5, 0, 0, 0}, {0, 0, 0, 0}}, c, Method::ep), 1, p) == 2.0 * 12.0 * p.dtype_bytes);

    const StepMetrics ll = step({{10, 0, 0, 0}, {0, 0, 0, 0}}, c, Method::llep);
    CHECK(peak_memory(ll, 1, p) == (5.0 * 7.0 + 3.0 * 12.0) * p.dtype_bytes);
}

TEST_CASE("compare reports speedup and memory ratio against a baseline", "[costmodel]") {
    const CostParams p = cost_profile("h200");
    const MoeConfig c{8, 2, 64, 64, 4};
    const std::vector<std::vector<std::int64_t>> rows{{900, 10, 10, 10, 10, 10, 10, 10},
                                                      {800, 20, 10, 10, 10, 10, 10, 10},
                                                      {700, 10, 10, 10, 10, 10, 10, 10},
                                                      {600, 10, 10, 10, 10, 10, 10, 10}};
    const SimReport ep = build_report(step(rows, c, Method::ep), p, "ep");
    const SimReport ll = build_report(step(rows, c, Method::llep), p, "llep");

    const Comparison same = compare(ep, ep);
    CHECK(same.speedup == 1.0);
    CHECK(same.memory_ratio == 1.0);

    const Comparison fwd = compare(ep, ll);
    const Comparison back = compare(ll, ep);
    CHECK(fwd.speedup == Approx(1.0 / back.speedup).epsilon(1e-14));
    CHECK(fwd.speedup == Approx(ep.makespan_seconds / ll.makespan_seconds).epsilon(1e-14));
    CHECK(fwd.memory_ratio == Approx(ep.max_peak_memory_bytes / ll.max_peak_memory_bytes).epsilon(1e-14));

    double mk = 0.0;
    for (const auto& d : ll.devices) mk = std::max(mk, d.total_seconds);
    CHECK(ll.makespan_seconds == mk);

    const SimReport other = build_report(step({{1, 0, 0, 0, 0, 0, 0, 0}, std::vector<std::int64_t>(8), std::vector<std::int64_t>(8), std::vector<std::int64_t>(8)}, c, Method::ep), p, "ep");
    CHECK_THROWS_WITH(compare(ep, other), ContainsSubstring("reports describe different workloads"));
}

TEST_CASE("compute-only speedup is the ratio of maximum device loads", "[costmodel]") {
    const CostParams p = cost_profile("compute-only");
    Rng rng(4);
    for (int trial = 0; trial < 30; ++trial) {
        const MoeConfig c{16, 1, 32, 32, 4};
        std::vector<std::vector<std::int64_t>> rows(4, std::vector<std::int64_t>(16));
        for (auto& r : rows) {
            for (auto& v : r) v = rng.uniform() < 0.3 ? rng.uniform_int(0, 3000) : rng.uniform_int(0, 20);
        }
        const LoadMatrix lm = rows_of(rows, c);
        if (is_balanced(lm.global_loads, 1.0 + 1e-9)) continue;
        const PlannerConfig pc{1.0, 1, 1.0};
        const PlannedStep ll = plan_step(lm, c, pc, Method::llep);
        const PlannedStep ep = plan_step(lm, c, pc, Method::ep);
        const Comparison cmp = compare(build_report(ep.metrics, p, "ep"), build_report(ll.metrics, p, "llep"));
        const auto ep_loads = oracle::ep_device_loads(lm.global_loads, 4);
        const auto ll_loads = oracle::plan_device_loads(ll.plan, 4);
        const double expect = static_cast<double>(*std::max_element(ep_loads.begin(), ep_loads.end())) /
                              static_cast<double>(*std::max_element(ll_loads.begin(), ll_loads.end()));
        CHECK(cmp.speedup == Approx(expect).epsilon(1e-12));
        if (ll.plan.force_count == 0) CHECK(cmp.speedup >= 1.0 - 1e-12);
    }
}

TEST_CASE("cost parameters load from JSON with profile and overrides", "[costmodel]") {
    const CostParams a = cost_params_from_json_text(R"({"profile": "compute-only", "dtype_bytes": 4})");
    CHECK(a.dtype_bytes == 4.0);
    CHECK(a.t_launch == 0.0);
    CHECK(cost_params_from_json_text("{}") == cost_profile("h200"));
    CHECK_THROWS_WITH(cost_params_from_json_text(R"({"bandwidth": 1})"), ContainsSubstring("unknown cost parameter 'bandwidth'"));
    CHECK_THROWS_WITH(cost_params_from_json_text(R"({"eff_floor": 0})"), ContainsSubstring("eff_floor"));
    CHECK_THROWS_WITH(cost_params_from_json_text("[1]"), ContainsSubstring("JSON object"));
    CHECK_THROWS_WITH(cost_profile("a100"), ContainsSubstring("unknown cost profile 'a100'"));
    CHECK(cost_profile_names() == std::vector<std::string>{"h200", "compute-only"});

    const std::string path = "test_costmodel_params.json";
    {
        std::ofstream out(path);
        out << cost_params_to_json_text(a);
    }
    CHECK(load_cost_params(path) == a);
    std::remove(path.c_str());
    CHECK_THROWS_AS(load_cost_params("does/not/exist.json"), LlepError);

    CHECK(cost_params_hash(a) == cost_params_hash(a));
    CHECK(cost_params_hash(a) != cost_params_hash(cost_profile("h200")));
}

TEST_CASE("LLEP peak memory respects the capacity bound on the hot scenario", "[costmodel]") {
    const CostParams p = cost_profile("h200");
    Scenario s;
    s.config = MoeConfig{32, 2, 256, 256, 8};
    s.mode = ScenarioMode::concentrated;
    s.hot_fraction = 0.95;
    s.tokens_per_device = 4096;
    s.seed = 3;
    const LoadMatrix lm = scenario_load_matrix(s);
    const PlannerConfig pc{1.0, 64, 1.3};
    const PlannedStep ll = plan_step(lm, s.config, pc, Method::llep);
    const PlannedStep ep = plan_step(lm, s.config, pc, Method::ep);
    REQUIRE(ll.plan.force_count == 0);
    const double dh = 256.0 * 256.0;
    for (int d = 0; d < 8; ++d) {
        const double bound = p.dtype_bytes * (std::ceil(ll.plan.capacity) * 512.0 +
                                              (4.0 + static_cast<double>(ll.metrics.imports[static_cast<std::size_t>(d)].size())) * dh);
        CHECK(peak_memory(ll.metrics, d, p) <= bound);
    }
    const auto ep_loads = oracle::ep_device_loads(lm.global_loads, 8);
    CHECK(peak_memory(ep.metrics, 0, p) == p.dtype_bytes * (static_cast<double>(ep_loads[0]) * 512.0 + 4.0 * dh));
}
