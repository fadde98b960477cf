// Copyright (c) 2026, The LLEP Authors
// SPDX-License-Identifier: Apache-2.0

#include "catch_amalgamated.hpp"

#include <cmath>
#include <numeric>
#include <set>

#include "llep/workload.hpp"

using namespace llep;
using Catch::Approx;
using Catch::Matchers::ContainsSubstring;

namespace {

Scenario concentrated(const MoeConfig& c, double x, int y, std::int64_t tokens, std::uint64_t seed) {
    Scenario s;
    s.config = c;
    s.mode = ScenarioMode::concentrated;
    s.hot_fraction = x;
    s.hot_expert_count = y;
    s.tokens_per_device = tokens;
    s.seed = seed;
    return s;
}

}  // namespace

TEST_CASE("target_distribution splits hot and cold mass evenly", "[workload]") {
    Scenario bal;
    bal.config = MoeConfig{4, 1, 1, 1, 1};
    CHECK(target_distribution(bal) == std::vector<double>{0.25, 0.25, 0.25, 0.25});
    CHECK(bal.id() == "balanced");

    const Scenario hot = concentrated(MoeConfig{128, 4, 1, 1, 8}, 0.95, 1, 1, 0);
    const auto t = target_distribution(hot);
    CHECK(t[0] == 0.95);
    for (std::size_t i = 1; i < t.size(); ++i) CHECK(t[i] == Approx(0.05 / 127).epsilon(1e-15));
    CHECK(std::accumulate(t.begin(), t.end(), 0.0) == Approx(1.0).margin(1e-12));
    CHECK(hot.id() == "95pct_into_1");

    const auto u = target_distribution(concentrated(MoeConfig{8, 1, 1, 1, 1}, 0.5, 4, 1, 0));
    for (double v : u) CHECK(v == Approx(0.125).epsilon(1e-15));

    CHECK_THROWS_WITH(target_distribution(concentrated(MoeConfig{4, 1, 1, 1, 1}, 0.5, 4, 1, 0)),
                      ContainsSubstring("no cold experts"));
    CHECK_THROWS_AS(target_distribution(concentrated(MoeConfig{4, 1, 1, 1, 1}, 1.0, 1, 1, 0)), LlepError);
}

TEST_CASE("generate_routing draws distinct experts with uniform gates", "[workload]") {
    const Scenario s = concentrated(MoeConfig{16, 4, 3, 2, 4}, 0.8, 2, 200, 9);
    const auto routed = generate_routing(s);
    REQUIRE(routed.size() == 4);
    for (std::size_t p = 0; p < routed.size(); ++p) {
        const auto& r = routed[p].routing;
        CHECK(r.device_id == static_cast<int>(p));
        CHECK(routed[p].batch.tokens.rows() == 200);
        REQUIRE_NOTHROW(validate_routing(r, s.config));
        for (double g : r.gates) CHECK(g == 0.25);
        for (std::size_t t = 0; t < r.num_tokens(); ++t) {
            std::set<int> ids;
            for (int k = 0; k < 4; ++k) ids.insert(r.index(t, k));
            CHECK(ids.size() == 4);
        }
    }
    const auto again = generate_routing(s);
    for (std::size_t p = 0; p < routed.size(); ++p) {
        CHECK(again[p].routing == routed[p].routing);
        CHECK(again[p].batch.tokens == routed[p].batch.tokens);
    }
    CHECK_THROWS_WITH(generate_routing(concentrated(MoeConfig{4, 5, 1, 1, 1}, 0.5, 1, 1, 0)),
                      ContainsSubstring("K exceeds N"));
}

TEST_CASE("balanced routing loads stay within three standard deviations", "[workload][statistics]") {
    Scenario s;
    s.config = MoeConfig{8, 1, 1, 1, 4};
    s.tokens_per_device = 5000;
    s.seed = 12;
    const LoadMatrix lm = count_loads(generate_routing(s), 8);
    const double n = 20000.0;
    const double mean = n / 8.0;
    const double sd = std::sqrt(n * (1.0 / 8.0) * (7.0 / 8.0));
    for (auto l : lm.global_loads) CHECK(std::abs(static_cast<double>(l) - mean) <= 3.0 * sd);
}

TEST_CASE("hot expert receives about the requested fraction", "[workload][statistics]") {
    const Scenario s = concentrated(MoeConfig{16, 1, 1, 1, 2}, 0.95, 1, 10000, 5);
    const LoadMatrix lm = count_loads(generate_routing(s), 16);
    const double share = static_cast<double>(lm.global_loads[0]) / static_cast<double>(lm.total());
    const double sd = std::sqrt(0.95 * 0.05 / 20000.0);
    CHECK(std::abs(share - 0.95) <= 3.0 * sd);
}

TEST_CASE("scenario_load_matrix is seeded and conserves slots", "[workload]") {
    const Scenario s = concentrated(MoeConfig{32, 4, 1, 1, 8}, 0.5, 4, 3000, 21);
    const LoadMatrix a = scenario_load_matrix(s);
    CHECK(a == scenario_load_matrix(s));
    REQUIRE(a.world_size() == 8);
    for (const auto& row : a.counts) CHECK(std::accumulate(row.begin(), row.end(), std::int64_t{0}) == 3000 * 4);
    Scenario other = s;
    other.seed = 22;
    CHECK_FALSE(scenario_load_matrix(other) == a);

    const double total = 8.0 * 3000 * 4;
    const double hot_share = static_cast<double>(a.global_loads[0] + a.global_loads[1] + a.global_loads[2] + a.global_loads[3]) / total;
    CHECK(std::abs(hot_share - 0.5) <= 3.0 * std::sqrt(0.25 / total));
}

TEST_CASE("parse_trace reads both record formats", "[workload][trace]") {
    const MoeConfig c{4, 1, 1, 1, 2};
    const auto recs = parse_trace("# header\n\nr0, 1, 2, 3, 4\nr1,1,0,0,0,0,0,0,5\r\n", c);
    REQUIRE(recs.size() == 2);
    CHECK(recs[0].record_id == "r0");
    CHECK(recs[0].loads.counts == std::vector<std::vector<std::int64_t>>{{1, 2, 3, 4}, {0, 0, 0, 0}});
    CHECK(recs[1].loads.global_loads == std::vector<std::int64_t>{1, 0, 0, 5});
    CHECK(parse_trace("", c).empty());

    const auto round = parse_trace(format_trace_record("x", recs[1].loads), c);
    REQUIRE(round.size() == 1);
    CHECK(round[0].loads == recs[1].loads);
}

TEST_CASE("parse_trace reports errors with their line number", "[workload][trace]") {
    const MoeConfig c{4, 1, 1, 1, 2};
    CHECK_THROWS_WITH(parse_trace("ok,1,1,1,1\nbad,1,2,3\n", c), ContainsSubstring("trace line 2:"));
    CHECK_THROWS_WITH(parse_trace("neg,1,-1,1,1\n", c), ContainsSubstring("trace line 1: negative count"));
    CHECK_THROWS_WITH(parse_trace("# c\nm,1,x,1,1\n", c), ContainsSubstring("trace line 2: malformed count"));
    CHECK_THROWS_WITH(parse_trace(",1,1,1,1\n", c), ContainsSubstring("missing record id"));
    CHECK_THROWS_AS(load_trace("missing/trace.csv", c), LlepError);
}

TEST_CASE("a histogram with one expert at twenty percent of N=32 has ratio 6.4", "[workload][trace]") {
    const MoeConfig c{32, 1, 1, 1, 4};
    // 200 of 1000 slots on one expert, the other 800 spread over 31 experts
    std::string line = "layer3,";
    std::int64_t rest = 800;
    for (int i = 0; i < 32; ++i) {
        std::int64_t v = 0;
        if (i == 11) v = 200;
        else v = (i == 31) ? rest : 25 + (i % 2 == 0 ? 1 : -1);
        if (i != 11 && i != 31) rest -= v;
        line += std::to_string(v) + (i + 1 < 32 ? "," : "\n");
    }
    const auto recs = parse_trace(line, c);
    REQUIRE(recs.size() == 1);
    CHECK(recs[0].loads.total() == 1000);
    CHECK(imbalance_ratio(recs[0].loads.global_loads) == Approx(0.20 / (1.0 / 32.0)).epsilon(1e-12));
}
