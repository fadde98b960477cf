// Copyright (c) 2026, The LLEP Authors
// SPDX-License-Identifier: Apache-2.0
//
// Acceptance checks. Prints one PASS/FAIL line per criterion; `--only N` runs a
// single criterion. Exit status is nonzero when any selected criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "llep/app.hpp"
#include "llep/cli.hpp"
#include "oracles.hpp"

using namespace llep;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

struct Instance {
    MoeConfig config;
    ModelParams params;
    std::vector<TokenBatch> batches;
    std::vector<RouterOutput> routings;
};

Instance scenario_instance(const MoeConfig& c, std::int64_t tokens, int imbalance, std::uint64_t seed) {
    Scenario s;
    s.config = c;
    s.tokens_per_device = tokens;
    s.seed = seed;
    if (imbalance == 1) {
        s.mode = ScenarioMode::concentrated;
        s.hot_fraction = 0.5;
        s.hot_expert_count = std::min(4, c.n_experts - 1);
    } else if (imbalance == 2) {
        s.mode = ScenarioMode::concentrated;
        s.hot_fraction = 0.95;
        s.hot_expert_count = 1;
    }
    Instance inst{c, init_model_params(c, seed ^ 0x5eedULL), {}, {}};
    for (auto& rb : generate_routing(s)) {
        inst.batches.push_back(std::move(rb.batch));
        inst.routings.push_back(std::move(rb.routing));
    }
    return inst;
}

double max_diff(const std::vector<Matrix>& a, const std::vector<Matrix>& b) {
    double m = 0.0;
    for (std::size_t p = 0; p < a.size(); ++p) {
        if (a[p].rows() != b[p].rows() || a[p].cols() != b[p].cols()) {
            if (a[p].rows() == 0 && b[p].rows() == 0) continue;
            return std::numeric_limits<double>::infinity();
        }
        m = std::max(m, oracle::max_abs(a[p], b[p]));
    }
    return m;
}

// ---------------------------------------------------------------------------

Outcome exactness() {
    const auto start = Clock::now();
    Rng rng(20260101);
    const int worlds[] = {1, 2, 4, 8};
    int configs = 0;
    int spilled = 0;
    double worst = 0.0;
    std::string first_bad;
    for (int trial = 0; trial < 120; ++trial) {
        const int p = worlds[rng.uniform_int(0, 3)];
        const int per = static_cast<int>(rng.uniform_int(1, 32 / p));
        const int n = p * per;
        const int k = static_cast<int>(rng.uniform_int(1, std::min(4, std::max(1, n - 1))));
        const MoeConfig c{n, k, static_cast<int>(rng.uniform_int(1, 64)), static_cast<int>(rng.uniform_int(1, 64)), p};
        const std::int64_t tokens = rng.uniform_int(0, 256);
        int imbalance = static_cast<int>(rng.uniform_int(0, 2));
        if (n - 1 < k) imbalance = 0;
        if (imbalance == 1 && n <= 4) imbalance = 2;
        if (imbalance == 2 && n - 1 < k) imbalance = 0;
        const Instance inst = scenario_instance(c, tokens, imbalance, 1000 + static_cast<std::uint64_t>(trial));
        const PlannerConfig pc{rng.uniform(1.0, 2.0), std::int64_t{1} << rng.uniform_int(0, 6),
                               trial % 2 == 0 ? 1.0 : 1.3};

        const auto truth = oracle::dense_forward(inst.batches, inst.routings, inst.params, c.d_hidden);
        const auto ref = reference_forward(inst.batches, inst.routings, inst.params, c);
        const ExecResult ep = ep_dispatch_combine(inst.batches, inst.routings, inst.params, c);
        const ExecResult ll = llep_dispatch_combine(inst.batches, inst.routings, inst.params, c, pc);
        const double d = std::max({max_diff(ref, truth), max_diff(ep.outputs, truth), max_diff(ll.outputs, truth),
                                   max_diff(ep.outputs, ll.outputs)});
        if (d > 1e-10 && first_bad.empty()) {
            first_bad = " first failure trial=" + std::to_string(trial);
        }
        worst = std::max(worst, d);
        spilled += ll.transfers.transfers.empty() ? 0 : 1;
        ++configs;
    }
    const double elapsed = seconds_since(start);
    const bool pass = configs >= 100 && worst <= 1e-10 && elapsed < 60.0;
    return {pass, std::to_string(configs) + " configs (" + std::to_string(spilled) + " with spills), max |diff| " +
                      fmt("%.3g", worst) + " <= 1e-10, " + fmt("%.2f", elapsed) + " s < 60 s" + first_bad};
}

Outcome gradients() {
    Rng rng(4242);
    const int worlds[] = {2, 4, 8};
    int runs = 0;
    int attempts = 0;
    double worst_analytic = 0.0;
    double worst_fd = 0.0;
    int fd_entries = 0;
    while (runs < 24 && attempts < 200) {
        ++attempts;
        const int p = worlds[rng.uniform_int(0, 2)];
        const int n = p * static_cast<int>(rng.uniform_int(1, 4));
        const int k = static_cast<int>(rng.uniform_int(1, std::min(4, n - 1)));
        const MoeConfig c{n, k, static_cast<int>(rng.uniform_int(2, 12)), static_cast<int>(rng.uniform_int(2, 12)), p};
        Instance inst = scenario_instance(c, rng.uniform_int(8, 64), 2, 7000 + static_cast<std::uint64_t>(attempts));
        std::vector<Matrix> upstream;
        for (const auto& b : inst.batches) {
            Matrix m(b.tokens.rows(), static_cast<std::size_t>(c.d_hidden));
            for (double& v : m.data()) v = rng.normal();
            upstream.push_back(std::move(m));
        }
        const BackwardResult r = backward_weights(inst.batches, inst.routings, inst.params, c,
                                                  PlannerConfig{1.0, 1, 1.0}, upstream);
        if (r.transfers.transfers.empty()) continue;
        ++runs;
        const auto expect = oracle::dense_weight_grads(inst.batches, inst.routings, upstream, n, c.d_model, c.d_hidden);
        for (int i = 0; i < n; ++i) {
            worst_analytic = std::max(worst_analytic, oracle::max_abs(r.accumulated.grads[static_cast<std::size_t>(i)],
                                                                      expect[static_cast<std::size_t>(i)]));
        }
        const int expert = r.transfers.transfers[static_cast<std::size_t>(rng.uniform_int(
                                                     0, static_cast<std::int64_t>(r.transfers.transfers.size()) - 1))]
                               .expert;
        auto loss = [&] {
            const auto h = oracle::dense_forward(inst.batches, inst.routings, inst.params, c.d_hidden);
            double s = 0.0;
            for (std::size_t q = 0; q < h.size(); ++q) {
                for (std::size_t j = 0; j < h[q].data().size(); ++j) s += h[q].data()[j] * upstream[q].data()[j];
            }
            return s;
        };
        for (int e = 0; e < 5; ++e) {
            auto& w = inst.params.expert_weights[static_cast<std::size_t>(expert)];
            const auto a = static_cast<std::size_t>(rng.uniform_int(0, c.d_model - 1));
            const auto b = static_cast<std::size_t>(rng.uniform_int(0, c.d_hidden - 1));
            const double saved = w(a, b);
            w(a, b) = saved + 1e-6;
            const double plus = loss();
            w(a, b) = saved - 1e-6;
            const double minus = loss();
            w(a, b) = saved;
            const double fd = (plus - minus) / 2e-6;
            const double g = r.accumulated.grads[static_cast<std::size_t>(expert)](a, b);
            const double scale = std::max(std::abs(g), 1e-8);
            worst_fd = std::max(worst_fd, std::abs(fd - g) / scale);
            ++fd_entries;
        }
    }
    const bool pass = runs >= 20 && worst_analytic <= 1e-10 && worst_fd <= 1e-4;
    return {pass, std::to_string(runs) + " spill configs, max |grad - oracle| " + fmt("%.3g", worst_analytic) +
                      " <= 1e-10, " + std::to_string(fd_entries) + " finite-difference entries, max rel err " +
                      fmt("%.3g", worst_fd) + " <= 1e-4"};
}

Outcome plan_fuzz() {
    Rng rng(99);
    const std::int64_t mins[] = {0, 1, 64, 1024};
    int cases = 0;
    int violations = 0;
    int forced = 0;
    std::string first_bad;
    for (int trial = 0; trial < 1200; ++trial) {
        const int p = static_cast<int>(rng.uniform_int(1, 16));
        const int n = p * static_cast<int>(rng.uniform_int(1, 512 / p));
        const MoeConfig c{n, 1, 1, 1, p};
        std::vector<std::int64_t> loads(static_cast<std::size_t>(n));
        const int shape = trial % 4;
        for (auto& l : loads) {
            if (shape == 0) l = rng.uniform_int(0, 2000);
            else if (shape == 1) l = rng.uniform() < 0.1 ? rng.uniform_int(0, 100000) : 0;
            else if (shape == 2) l = static_cast<std::int64_t>(std::pow(10.0, rng.uniform(0.0, 5.0)));
            else l = rng.uniform_int(0, 40);
        }
        if (shape == 3) loads[static_cast<std::size_t>(rng.uniform_int(0, n - 1))] += rng.uniform_int(0, 4000);
        const PlannerConfig pc{rng.uniform(1.0, 3.0), mins[rng.uniform_int(0, 3)], 1.0};
        const auto [plan, transfers] = lla_plan(loads, c, pc);
        const auto bad = oracle::plan_violations(plan, transfers, loads, p);
        if (!bad.empty()) {
            ++violations;
            if (first_bad.empty()) first_bad = " first: trial " + std::to_string(trial) + " " + bad.front();
        }
        forced += plan.force_count > 0 ? 1 : 0;
        ++cases;
    }
    return {cases >= 1000 && violations == 0, std::to_string(cases) + " load vectors (" + std::to_string(forced) +
                                                  " with force-assign), " + std::to_string(violations) +
                                                  " invariant violations" + first_bad};
}

Outcome hand_traces() {
    const MoeConfig c{4, 1, 1, 1, 2};
    int ok = 0;
    {
        const auto [plan, tr] = lla_plan(std::vector<std::int64_t>{10, 0, 0, 0}, c, PlannerConfig{1.0, 1, 1.3});
        ok += plan.capacity == 5.0 && plan.per_expert[0] == std::vector<Chunk>{{0, 0, 5}, {1, 5, 10}} &&
              plan.per_expert[1].empty() && plan.per_expert[2].empty() && plan.per_expert[3].empty() &&
              tr.transfers == std::vector<WeightTransfer>{{0, 0, 1}} &&
              plan.assigned_load == std::vector<std::int64_t>{5, 5};
    }
    {
        const auto [plan, tr] = lla_plan(std::vector<std::int64_t>{5, 5, 5, 5}, c, PlannerConfig{1.0, 1, 1.3});
        bool native = true;
        for (int i = 0; i < 4; ++i) native = native && plan.per_expert[static_cast<std::size_t>(i)] == std::vector<Chunk>{{i / 2, 0, 5}};
        ok += native && tr.transfers.empty() && plan.assigned_load == std::vector<std::int64_t>{10, 10};
    }
    {
        const auto [plan, tr] = lla_plan(std::vector<std::int64_t>{9, 0, 4, 0}, c, PlannerConfig{1.0, 4, 1.3});
        ok += plan.capacity == 6.5 && plan.per_expert[0] == std::vector<Chunk>{{0, 0, 6}, {1, 6, 9}} &&
              plan.per_expert[2] == std::vector<Chunk>{{1, 0, 3}, {0, 3, 4}} &&
              tr.transfers == std::vector<WeightTransfer>{{0, 0, 1}, {2, 1, 0}} &&
              plan.assigned_load == std::vector<std::int64_t>{7, 6} && plan.force_count > 0;
    }
    return {ok == 3, std::to_string(ok) + "/3 hand-traced plans reproduced exactly"};
}

Outcome balanced_fallback() {
    int ok = 0;
    int total = 0;
    for (int world : {2, 4, 8}) {
        const MoeConfig c{4 * world, 2, 16, 8, world};
        // every expert receives exactly the same number of slots
        Instance inst{c, init_model_params(c, 55), {}, {}};
        Rng rng(static_cast<std::uint64_t>(world));
        for (int p = 0; p < world; ++p) {
            const std::size_t tokens = static_cast<std::size_t>(c.n_experts) * 3;
            TokenBatch b{p, Matrix(tokens, 16)};
            for (double& v : b.tokens.data()) v = rng.normal();
            RouterOutput r{p, c.n_experts, 2, {}, {}};
            for (std::size_t t = 0; t < tokens; ++t) {
                const int e = static_cast<int>(t % static_cast<std::size_t>(c.n_experts));
                r.indices.push_back(e);
                r.indices.push_back((e + 1 + p) % c.n_experts);
                r.gates.push_back(rng.uniform());
                r.gates.push_back(rng.uniform());
            }
            inst.batches.push_back(std::move(b));
            inst.routings.push_back(std::move(r));
        }
        const ExecResult ep = ep_dispatch_combine(inst.batches, inst.routings, inst.params, c);
        const ExecResult ll = llep_dispatch_combine(inst.batches, inst.routings, inst.params, c, PlannerConfig{1.0, 1024, 1.3});
        ++total;
        const bool uniform = imbalance_ratio(ll.loads.global_loads) == 1.0;
        ok += uniform && ll.balanced_fallback && !ll.metrics.used_lla &&
              ll.plan == native_plan(ll.loads.global_loads, c) && ll.transfers.transfers.empty() &&
              ll.outputs == ep.outputs && ll.metrics.messages == ep.metrics.messages;
    }
    return {ok == total, std::to_string(ok) + "/" + std::to_string(total) +
                             " uniform workloads took the EP path with native plan, no transfers, bitwise-equal outputs"};
}

RunConfig bench_run(double x, int y) {
    RunConfig run;
    run.cost_only = true;
    run.hot_fraction = x;
    run.hot_count = y;
    return run;
}

struct Pair {
    SimReport ep;
    SimReport llep;
};

Pair simulate_pair(const RunConfig& run) {
    const auto reports = build_sim_reports(run);
    return {reports.at(0), reports.at(1)};
}

/// Max EP device load over max LLEP device load: the speedup of a model with no
/// communication, no launch cost and constant efficiency.
double compute_only_bound(const RunConfig& run) {
    const LoadMatrix lm = scenario_load_matrix(make_scenario(run));
    const auto [plan, tr] = lla_plan(lm.global_loads, run.config, run.planner);
    const auto ep = oracle::ep_device_loads(lm.global_loads, run.config.world_size);
    const auto ll = oracle::plan_device_loads(plan, run.config.world_size);
    return static_cast<double>(*std::max_element(ep.begin(), ep.end())) /
           static_cast<double>(*std::max_element(ll.begin(), ll.end()));
}

const double kLevels[] = {0.30, 0.50, 0.80, 0.95};

Outcome speedup_trend() {
    const auto start = Clock::now();
    bool monotone = true;
    double hot = 0.0;
    std::string seq;
    for (int y : {1, 4, 16}) {
        double prev = 0.0;
        for (double x : kLevels) {
            const Pair r = simulate_pair(bench_run(x, y));
            const double s = *r.llep.speedup;
            monotone = monotone && s >= prev;
            prev = s;
            if (y == 1) seq += (seq.empty() ? "" : ", ") + fmt("%.3f", s);
            if (y == 1 && x == 0.95) hot = s;
        }
    }
    const double elapsed = seconds_since(start);
    const double bound = compute_only_bound(bench_run(0.95, 1));
    const double model_bound = *simulate_pair([] {
                                    RunConfig r = bench_run(0.95, 1);
                                    r.profile = "compute-only";
                                    return r;
                                }())
                                    .llep.speedup;
    const bool pass = hot >= 3.5 && hot <= 8.0 && monotone && elapsed < 5.0 &&
                      std::abs(model_bound - bound) <= 1e-9 * bound;
    return {pass, "95%->1 speedup " + fmt("%.3f", hot) + " in [3.5, 8.0]; y=1 levels 30/50/80/95%: " + seq +
                      (monotone ? " (monotone for y=1,4,16)" : " (NOT monotone)") + "; compute-only bound " +
                      fmt("%.3f", bound) + "; 12 cost-model runs in " + fmt("%.2f", elapsed) + " s < 5 s"};
}

Outcome memory_trend() {
    std::vector<double> ep_peak, ll_peak;
    double ratio = 0.0;
    for (double x : kLevels) {
        const Pair r = simulate_pair(bench_run(x, 1));
        ep_peak.push_back(r.ep.max_peak_memory_bytes);
        ll_peak.push_back(r.llep.max_peak_memory_bytes);
        if (x == 0.95) ratio = *r.llep.memory_ratio;
    }
    const double lo = *std::min_element(ll_peak.begin(), ll_peak.end());
    const double hi = *std::max_element(ll_peak.begin(), ll_peak.end());
    const double spread = (hi - lo) / lo;
    const bool ep_monotone = std::is_sorted(ep_peak.begin(), ep_peak.end()) &&
                             std::adjacent_find(ep_peak.begin(), ep_peak.end()) == ep_peak.end();
    const bool band = ratio >= 3.0 && ratio <= 6.0;
    return {band && spread < 0.15 && ep_monotone,
            "95%->1 EP/LLEP peak ratio " + fmt("%.3f", ratio) + (band ? " in" : " OUTSIDE") +
                " [3.0, 6.0]; LLEP peak spread " + fmt("%.1f", spread * 100.0) + "% < 15%; EP peak " +
                (ep_monotone ? "grows monotonically" : "NOT monotone") + " (" + fmt("%.3g", ep_peak.front()) + " -> " +
                fmt("%.3g", ep_peak.back()) + " bytes)"};
}

Outcome ablations() {
    RunConfig base = bench_run(0.5, 4);
    base.threads = 4;
    struct Sweep {
        const char* axis;
        std::vector<double> values;
        bool nonincreasing;
    };
    const std::vector<Sweep> sweeps{{"alpha", {1.0, 1.5, 2.0, 2.5, 3.0}, true},
                                    {"batch", {4096, 8192, 16384, 32768, 65536}, false},
                                    {"hidden", {512, 1024, 2048, 4096}, false},
                                    {"experts", {16, 32, 64, 128, 256}, false}};
    bool all = true;
    std::string detail;
    char label = 'a';
    for (const auto& s : sweeps) {
        const auto rows = build_sweep_rows(base, s.axis, s.values);
        bool ok = true;
        std::string seq;
        for (std::size_t i = 0; i < rows.size(); ++i) {
            if (i > 0) {
                ok = ok && (s.nonincreasing ? rows[i].speedup <= rows[i - 1].speedup
                                            : rows[i].speedup >= rows[i - 1].speedup);
            }
            seq += (i ? " " : "") + fmt("%.3f", rows[i].speedup);
        }
        all = all && ok;
        detail += std::string(detail.empty() ? "" : "; ") + "(" + label++ + ") " + s.axis + " [" + seq + "] " +
                  (ok ? (s.nonincreasing ? "nonincreasing" : "nondecreasing") : "NOT monotone");
    }
    return {all, "50%->4 base, B_p=32768: " + detail};
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

Outcome determinism() {
    const fs::path root = fs::temp_directory_path() / "llep_acceptance_determinism";
    fs::remove_all(root);
    const std::vector<std::string> small{"--n-experts", "16", "--top-k", "2", "--d-model", "16", "--d-hidden", "8",
                                         "--world-size", "4", "--tokens-per-device", "64", "--min-chunk", "4",
                                         "--seed", "17"};
    std::vector<std::vector<std::string>> commands{
        {"plan"},
        {"simulate", "--hot-fraction", "0.8"},
        {"simulate", "--cost-only"},
        {"gen", "--hot-fraction", "0.5", "--hot-count", "4"},
        {"sweep", "--axis", "alpha", "--values", "3,1,2,1.5,2.5", "--cost-only"},
        {"sweep", "--axis", "experts", "--values", "64,16,32", "--cost-only"}};
    int compared = 0;
    int mismatched = 0;
    for (std::size_t i = 0; i < commands.size(); ++i) {
        std::vector<fs::path> dirs;
        for (int rep = 0; rep < 3; ++rep) {
            auto args = commands[i];
            args.insert(args.end(), small.begin(), small.end());
            const fs::path dir = root / (std::to_string(i) + "_" + std::to_string(rep));
            args.insert(args.end(), {"--out", dir.string(), "--threads", rep == 2 ? "4" : "1"});
            std::ostringstream out, err;
            if (run_cli(args, out, err) != 0) return {false, "command failed: " + commands[i].front() + " " + err.str()};
            dirs.push_back(dir);
        }
        for (const auto& entry : fs::directory_iterator(dirs[0])) {
            const std::string ref = slurp(entry.path());
            for (std::size_t rep = 1; rep < dirs.size(); ++rep) {
                ++compared;
                if (slurp(dirs[rep] / entry.path().filename()) != ref) ++mismatched;
            }
        }
    }
    fs::remove_all(root);
    return {compared > 0 && mismatched == 0,
            std::to_string(commands.size()) + " commands x 3 runs (threads 1, 1, 4): " + std::to_string(compared) +
                " file comparisons, " + std::to_string(mismatched) + " differ"};
}

struct Criterion {
    int id;
    const char* name;
    std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
    const std::vector<Criterion> criteria{{1, "exactness", exactness},
                                          {2, "gradients", gradients},
                                          {3, "plan-invariant fuzz", plan_fuzz},
                                          {4, "hand-traced plans", hand_traces},
                                          {5, "balanced fallback", balanced_fallback},
                                          {6, "speedup trend", speedup_trend},
                                          {7, "memory trend", memory_trend},
                                          {8, "ablation monotonicity", ablations},
                                          {9, "determinism", determinism}};
    int only = 0;
    for (int i = 1; i < argc; ++i) {
        const std::string a = argv[i];
        if (a == "--only" && i + 1 < argc) {
            only = std::atoi(argv[++i]);
        } else {
            std::cerr << "usage: llep_acceptance [--only N]\n";
            return 1;
        }
    }
    if (only < 0 || only > static_cast<int>(criteria.size())) {
        std::cerr << "no criterion " << only << "\n";
        return 1;
    }
    bool all = true;
    for (const auto& c : criteria) {
        if (only != 0 && c.id != only) continue;
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("error: ") + e.what()};
        }
        all = all && o.pass;
        std::cout << "criterion " << c.id << " (" << c.name << "): " << (o.pass ? "PASS" : "FAIL") << " - "
                  << o.detail << std::endl;
    }
    return all ? 0 : 1;
}
