// Copyright (c) 2026, The LLEP Authors
// SPDX-License-Identifier: Apache-2.0

#include "llep/verify.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "llep/report.hpp"
#include "llep/workload.hpp"

namespace llep {

namespace {

struct DenseCase {
    Scenario scenario;
    PlannerConfig planner;
    std::vector<TokenBatch> batches;
    std::vector<RouterOutput> routings;
    ModelParams params;
};

std::string describe(const Scenario& s, const PlannerConfig& pl) {
    std::ostringstream os;
    os << "N=" << s.config.n_experts << " K=" << s.config.top_k << " D=" << s.config.d_model
       << " H=" << s.config.d_hidden << " P=" << s.config.world_size << " B_p=" << s.tokens_per_device
       << " scenario=" << s.id() << " alpha=" << format_double(pl.alpha) << " m=" << pl.min_chunk
       << " lambda=" << format_double(pl.lambda);
    return os.str();
}

std::string replay(const char* suite, std::uint64_t seed, int trial) {
    return std::string(suite) + " seed=" + std::to_string(seed) + " trial=" + std::to_string(trial);
}

// Picks "balanced", "50pct_into_4" or "95pct_into_1", degrading when N is too small.
void pick_imbalance(Scenario& s, Rng& rng) {
    const int n = s.config.n_experts;
    const auto kind = rng.uniform_int(0, 2);
    if (kind == 1 && n > 4) {
        s.mode = ScenarioMode::concentrated;
        s.hot_expert_count = 4;
        s.hot_fraction = 0.5;
    } else if (kind >= 1 && n > 1) {
        s.mode = ScenarioMode::concentrated;
        s.hot_expert_count = 1;
        s.hot_fraction = 0.95;
    } else {
        s.mode = ScenarioMode::balanced;
    }
}

DenseCase build_case(const Scenario& s, const PlannerConfig& pl, bool random_gates, std::uint64_t seed) {
    DenseCase c{s, pl, {}, {}, init_model_params(s.config, seed)};
    auto routed = generate_routing(s);
    Rng gate_rng = Rng::substream(seed, 0x6761746573ULL);
    for (auto& rb : routed) {
        if (random_gates) {
            for (double& g : rb.routing.gates) g = gate_rng.uniform(0.05, 1.0);
        }
        c.batches.push_back(std::move(rb.batch));
        c.routings.push_back(std::move(rb.routing));
    }
    return c;
}

SuiteResult exactness_suite(const VerifyOptions& opt) {
    SuiteResult suite{"exactness", 0, opt.trials, {}};
    static constexpr int kWorlds[] = {1, 2, 4, 8};
    static constexpr std::int64_t kMinChunks[] = {0, 1, 4, 16, 64};
    for (int t = 0; t < opt.trials; ++t) {
        const std::uint64_t trial_seed = splitmix64(opt.seed + static_cast<std::uint64_t>(t));
        Rng rng(trial_seed);
        Scenario s;
        s.config.world_size = kWorlds[rng.uniform_int(0, 3)];
        s.config.n_experts = s.config.world_size * static_cast<int>(rng.uniform_int(1, 32 / s.config.world_size));
        s.config.top_k = static_cast<int>(rng.uniform_int(1, std::min(4, s.config.n_experts)));
        s.config.d_model = static_cast<int>(rng.uniform_int(1, 64));
        s.config.d_hidden = static_cast<int>(rng.uniform_int(1, 64));
        s.tokens_per_device = rng.uniform_int(0, 19) == 0 ? 0 : rng.uniform_int(1, 256);
        s.seed = trial_seed;
        pick_imbalance(s, rng);
        PlannerConfig pl;
        pl.alpha = rng.uniform(1.0, 2.0);
        pl.min_chunk = kMinChunks[rng.uniform_int(0, 4)];
        pl.lambda = rng.uniform_int(0, 1) == 0 ? 1.0 : 1.3;

        try {
            const DenseCase c = build_case(s, pl, rng.uniform_int(0, 1) == 1, trial_seed);
            ExecOptions eo;
            eo.mode = opt.mode;
            const auto ref = reference_forward(c.batches, c.routings, c.params, s.config);
            const auto ep = ep_dispatch_combine(c.batches, c.routings, c.params, s.config, eo);
            const auto ll = llep_dispatch_combine(c.batches, c.routings, c.params, s.config, pl, eo);
            double worst = 0.0;
            for (std::size_t p = 0; p < ref.size(); ++p) {
                worst = std::max({worst, max_abs_diff(ref[p], ep.outputs[p]), max_abs_diff(ref[p], ll.outputs[p]),
                                  max_abs_diff(ep.outputs[p], ll.outputs[p])});
            }
            if (worst <= opt.exactness_tol) {
                ++suite.passed;
            } else {
                suite.failures.push_back(replay("exactness", opt.seed, t) + " " + describe(s, pl) +
                                         ": max abs diff " + format_double(worst));
            }
        } catch (const std::exception& e) {
            suite.failures.push_back(replay("exactness", opt.seed, t) + " " + describe(s, pl) + ": " + e.what());
        }
    }
    return suite;
}

SuiteResult invariant_suite(const VerifyOptions& opt) {
    const int trials = opt.trials * 10;
    SuiteResult suite{"plan-invariants", 0, trials, {}};
    static constexpr std::int64_t kMinChunks[] = {0, 1, 64, 1024};
    for (int t = 0; t < trials; ++t) {
        const std::uint64_t trial_seed = splitmix64(opt.seed ^ 0x706c616eULL) + static_cast<std::uint64_t>(t);
        Rng rng(splitmix64(trial_seed));
        MoeConfig cfg;
        cfg.world_size = static_cast<int>(rng.uniform_int(1, 16));
        cfg.n_experts = cfg.world_size * static_cast<int>(rng.uniform_int(1, 512 / cfg.world_size));
        cfg.top_k = 1;
        cfg.d_model = cfg.d_hidden = 1;
        PlannerConfig pl;
        pl.alpha = rng.uniform(1.0, 3.0);
        pl.min_chunk = kMinChunks[rng.uniform_int(0, 3)];

        // Mix of skewed, sparse and near-uniform load vectors.
        std::vector<std::int64_t> loads(static_cast<std::size_t>(cfg.n_experts));
        const auto shape = rng.uniform_int(0, 2);
        const std::int64_t scale = std::int64_t{1} << rng.uniform_int(0, 16);
        for (auto& l : loads) {
            if (shape == 0) {
                l = rng.uniform_int(0, scale);
            } else if (shape == 1) {
                l = rng.uniform_int(0, 3) == 0 ? rng.uniform_int(0, scale) : 0;
            } else {
                l = static_cast<std::int64_t>(static_cast<double>(scale) / std::pow(rng.uniform(0.01, 1.0), 2.0));
            }
        }
        if (rng.uniform_int(0, 1) == 0) loads[static_cast<std::size_t>(rng.uniform_int(0, cfg.n_experts - 1))] += scale * 50;

        std::ostringstream what;
        what << "N=" << cfg.n_experts << " P=" << cfg.world_size << " alpha=" << format_double(pl.alpha)
             << " m=" << pl.min_chunk;
        try {
            auto [plan, transfers] = lla_plan(loads, cfg, pl);
            if (opt.inject_fault) shift_chunk_boundary(plan);
            const auto violated = check_plan_invariants(plan, transfers, loads, cfg);
            if (violated.empty()) {
                ++suite.passed;
            } else {
                std::string names;
                for (const auto& v : violated) names += (names.empty() ? "" : ",") + v;
                suite.failures.push_back(replay("plan-invariants", opt.seed, t) + " " + what.str() +
                                         ": violated " + names);
            }
        } catch (const std::exception& e) {
            suite.failures.push_back(replay("plan-invariants", opt.seed, t) + " " + what.str() + ": " + e.what());
        }
    }
    return suite;
}

double loss(const std::vector<Matrix>& outputs, std::span<const Matrix> upstream) {
    double total = 0.0;
    for (std::size_t p = 0; p < outputs.size(); ++p) {
        const auto a = outputs[p].data();
        const auto b = upstream[p].data();
        for (std::size_t i = 0; i < a.size(); ++i) total += a[i] * b[i];
    }
    return total;
}

SuiteResult gradient_suite(const VerifyOptions& opt) {
    const int trials = std::max(1, opt.trials / 5);
    SuiteResult suite{"gradients", 0, trials, {}};
    static constexpr int kWorlds[] = {2, 4, 8};
    for (int t = 0; t < trials; ++t) {
        const std::uint64_t trial_seed = splitmix64(opt.seed ^ 0x67726164ULL) + static_cast<std::uint64_t>(t);
        Rng rng(splitmix64(trial_seed));
        Scenario s;
        s.config.world_size = kWorlds[rng.uniform_int(0, 2)];
        s.config.n_experts = s.config.world_size * static_cast<int>(rng.uniform_int(1, 4));
        s.config.top_k = static_cast<int>(rng.uniform_int(1, std::min(4, s.config.n_experts - 1)));
        s.config.d_model = static_cast<int>(rng.uniform_int(2, 12));
        s.config.d_hidden = static_cast<int>(rng.uniform_int(2, 12));
        s.tokens_per_device = rng.uniform_int(16, 96);
        s.seed = trial_seed;
        s.mode = ScenarioMode::concentrated;
        s.hot_expert_count = 1;
        s.hot_fraction = 0.95;
        PlannerConfig pl;
        pl.alpha = rng.uniform(1.0, 1.5);
        pl.min_chunk = rng.uniform_int(0, 1);
        pl.lambda = 1.0;

        const std::string tag = replay("gradients", opt.seed, t) + " " + describe(s, pl);
        try {
            DenseCase c = build_case(s, pl, true, trial_seed);
            std::vector<Matrix> upstream;
            Rng up_rng = Rng::substream(trial_seed, 0x7570ULL);
            for (const auto& b : c.batches) {
                Matrix g(b.tokens.rows(), static_cast<std::size_t>(s.config.d_hidden));
                for (double& v : g.data()) v = up_rng.normal();
                upstream.push_back(std::move(g));
            }
            ExecOptions eo;
            eo.mode = opt.mode;
            const auto back = backward_weights(c.batches, c.routings, c.params, s.config, pl, upstream, Method::llep, eo);
            if (back.transfers.transfers.empty()) {
                suite.failures.push_back(tag + ": configuration did not spill");
                continue;
            }
            const auto oracle = reference_weight_gradients(c.batches, c.routings, s.config, upstream);
            double worst = 0.0;
            for (std::size_t i = 0; i < oracle.size(); ++i) {
                worst = std::max(worst, max_abs_diff(oracle[i], back.accumulated.grads[i]));
            }
            if (worst > opt.gradient_tol) {
                suite.failures.push_back(tag + ": analytic gradient diff " + format_double(worst));
                continue;
            }

            // Central differences on entries of experts that received tokens.
            std::vector<int> touched;
            for (const auto& pg : back.partials) {
                if (touched.empty() || touched.back() != pg.expert) touched.push_back(pg.expert);
            }
            const double eps = 1e-6;
            double worst_rel = 0.0;
            for (int sample = 0; sample < 5 && !touched.empty(); ++sample) {
                const int e = touched[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(touched.size()) - 1))];
                const auto a = static_cast<std::size_t>(rng.uniform_int(0, s.config.d_model - 1));
                const auto b = static_cast<std::size_t>(rng.uniform_int(0, s.config.d_hidden - 1));
                double& w = c.params.expert_weights[static_cast<std::size_t>(e)](a, b);
                const double saved = w;
                w = saved + eps;
                const double up = loss(reference_forward(c.batches, c.routings, c.params, s.config), upstream);
                w = saved - eps;
                const double down = loss(reference_forward(c.batches, c.routings, c.params, s.config), upstream);
                w = saved;
                const double fd = (up - down) / (2.0 * eps);
                const double an = back.accumulated.grads[static_cast<std::size_t>(e)](a, b);
                const double rel = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-8});
                worst_rel = std::max(worst_rel, rel);
            }
            if (worst_rel <= opt.finite_difference_rtol) {
                ++suite.passed;
            } else {
                suite.failures.push_back(tag + ": finite-difference relative error " + format_double(worst_rel));
            }
        } catch (const std::exception& e) {
            suite.failures.push_back(tag + ": " + e.what());
        }
    }
    return suite;
}

}  // namespace

bool VerifyReport::ok() const {
    return std::all_of(suites.begin(), suites.end(), [](const SuiteResult& s) { return s.ok(); });
}

bool shift_chunk_boundary(AssignmentPlan& plan) {
    for (auto& chunks : plan.per_expert) {
        for (std::size_t j = 0; j + 1 < chunks.size(); ++j) {
            if (chunks[j].size() > 1) {
                chunks[j].end -= 1;
                return true;
            }
        }
    }
    for (auto& chunks : plan.per_expert) {
        if (!chunks.empty() && chunks.front().size() > 0) {
            chunks.front().end -= 1;
            return true;
        }
    }
    return false;
}

VerifyReport run_verify(const VerifyOptions& options) {
    if (options.trials < 0) throw LlepError("trials must be nonnegative");
    VerifyReport report;
    if (options.trials == 0) {
        report.vacuous = true;
        return report;
    }
    report.suites.push_back(exactness_suite(options));
    report.suites.push_back(invariant_suite(options));
    report.suites.push_back(gradient_suite(options));
    return report;
}

std::string format_verify_report(const VerifyReport& report) {
    std::string out;
    if (report.vacuous) out += "warning: trials=0, nothing was checked\n";
    for (const auto& s : report.suites) {
        out += s.name + ": " + std::to_string(s.passed) + "/" + std::to_string(s.total) + " passed\n";
        for (const auto& f : s.failures) out += "  FAIL " + f + "\n";
    }
    out += report.ok() ? "verify: PASS\n" : "verify: FAIL\n";
    return out;
}

}  // namespace llep
