// Copyright (c) 2026, The LLEP Authors
// SPDX-License-Identifier: Apache-2.0

#include "llep/cli.hpp"

#include <map>
#include <ostream>

#include "CLI11.hpp"
#include "llep/app.hpp"

namespace llep {

namespace {

struct Flags {
    std::string config_path;
    std::uint64_t seed = 0;
    std::string out;
    std::string profile;
    std::string cost_file;
    std::string method;
    int n_experts = 0;
    int top_k = 0;
    int d_model = 0;
    int d_hidden = 0;
    int world_size = 0;
    std::int64_t tokens_per_device = 0;
    double hot_fraction = 0.0;
    int hot_count = 0;
    bool balanced = false;
    double alpha = 1.0;
    std::int64_t min_chunk = 0;
    double lambda = 1.0;
    std::string trace;
    std::string loads;
    bool cost_only = false;
    std::int64_t element_budget = 0;
    int threads = 1;
};

struct RunOptions {
    std::map<std::string, CLI::Option*> by_name;

    bool given(const std::string& name) const {
        const auto it = by_name.find(name);
        return it != by_name.end() && it->second->count() > 0;
    }
};

RunOptions add_run_flags(CLI::App* app, Flags& f, bool with_loads) {
    RunOptions o;
    auto& m = o.by_name;
    m["config"] = app->add_option("--config", f.config_path, "JSON run config; flags override its values");
    m["seed"] = app->add_option("--seed", f.seed, "Scenario and model seed");
    m["out"] = app->add_option("--out", f.out, "Output directory (stdout when omitted)");
    m["profile"] = app->add_option("--profile", f.profile, "Cost profile: h200 (default) or compute-only");
    m["cost-file"] = app->add_option("--cost-file", f.cost_file, "JSON cost parameters (overrides --profile)");
    m["method"] = app->add_option("--method", f.method, "ep, llep or both");
    m["n-experts"] = app->add_option("--n-experts", f.n_experts, "Number of experts N");
    m["top-k"] = app->add_option("--top-k", f.top_k, "Experts per token K");
    m["d-model"] = app->add_option("--d-model", f.d_model, "Token dimension D");
    m["d-hidden"] = app->add_option("--d-hidden", f.d_hidden, "Expert output dimension H");
    m["world-size"] = app->add_option("--world-size", f.world_size, "Simulated devices P");
    m["tokens-per-device"] = app->add_option("--tokens-per-device", f.tokens_per_device, "Tokens per device B_p");
    m["hot-fraction"] = app->add_option("--hot-fraction", f.hot_fraction, "Share of routed slots on hot experts");
    m["hot-count"] = app->add_option("--hot-count", f.hot_count, "Number of hot experts");
    m["balanced"] = app->add_flag("--balanced", f.balanced, "Uniform routing instead of a hot-expert scenario");
    m["alpha"] = app->add_option("--alpha", f.alpha, "Capacity factor alpha >= 1");
    m["min-chunk"] = app->add_option("--min-chunk", f.min_chunk, "Minimum spill chunk m");
    m["lambda"] = app->add_option("--lambda", f.lambda, "Imbalance ratio below which EP is used");
    m["trace"] = app->add_option("--trace", f.trace, "Trace file of per-expert load records");
    m["cost-only"] = app->add_flag("--cost-only", f.cost_only, "Skip dense numerics; plan on direct loads");
    m["element-budget"] = app->add_option("--element-budget", f.element_budget, "Dense simulation element limit");
    m["threads"] = app->add_option("--threads", f.threads, "Worker threads");
    if (with_loads) m["loads"] = app->add_option("--loads", f.loads, "Inline global loads, e.g. 10,0,0,0");
    return o;
}

RunConfig resolve(const RunOptions& o, const Flags& f) {
    RunConfig run = o.given("config") ? load_run_config(f.config_path) : RunConfig{};
    if (o.given("seed")) run.seed = f.seed;
    if (o.given("out")) run.out_dir = f.out;
    if (o.given("profile")) run.profile = f.profile;
    if (o.given("cost-file")) run.cost_file = f.cost_file;
    if (o.given("method")) run.method = parse_method(f.method);
    if (o.given("n-experts")) run.config.n_experts = f.n_experts;
    if (o.given("top-k")) run.config.top_k = f.top_k;
    if (o.given("d-model")) run.config.d_model = f.d_model;
    if (o.given("d-hidden")) run.config.d_hidden = f.d_hidden;
    if (o.given("world-size")) run.config.world_size = f.world_size;
    if (o.given("tokens-per-device")) run.tokens_per_device = f.tokens_per_device;
    if (o.given("hot-fraction")) run.hot_fraction = f.hot_fraction;
    if (o.given("hot-count")) run.hot_count = f.hot_count;
    if (o.given("balanced")) run.mode = ScenarioMode::balanced;
    if (o.given("alpha")) run.planner.alpha = f.alpha;
    if (o.given("min-chunk")) run.planner.min_chunk = f.min_chunk;
    if (o.given("lambda")) run.planner.lambda = f.lambda;
    if (o.given("trace")) run.trace_path = f.trace;
    if (o.given("cost-only")) run.cost_only = true;
    if (o.given("element-budget")) run.element_budget = f.element_budget;
    if (o.given("threads")) run.threads = f.threads;
    if (o.given("loads")) run.loads = parse_load_list(f.loads);
    if (run.threads < 1) throw LlepError("threads must be >= 1");
    cost_profile(run.profile);
    return run;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Least-loaded expert parallelism: planner, simulator and cost model", "llep"};
    app.require_subcommand(1);

    Flags plan_f, sim_f, sweep_f, gen_f;
    auto* plan = app.add_subcommand("plan", "Print the assignment plan and weight transfers");
    auto* simulate = app.add_subcommand("simulate", "Simulate EP and/or LLEP and write the cost report CSV");
    auto* sweep = app.add_subcommand("sweep", "EP-vs-LLEP comparison across one parameter axis");
    auto* verify = app.add_subcommand("verify", "Randomized exactness, plan-invariant and gradient checks");
    auto* gen = app.add_subcommand("gen", "Write a scenario's routing and load trace");

    const RunOptions plan_o = add_run_flags(plan, plan_f, true);
    const RunOptions sim_o = add_run_flags(simulate, sim_f, false);
    const RunOptions sweep_o = add_run_flags(sweep, sweep_f, false);
    const RunOptions gen_o = add_run_flags(gen, gen_f, false);

    std::string axis;
    std::vector<double> values;
    sweep->add_option("--axis", axis, "alpha, lambda, batch, hidden or experts")->required();
    sweep->add_option("--values", values, "Comma-separated axis values")->required()->delimiter(',');

    VerifyOptions vopt;
    bool inject = false;
    int verify_threads = 1;
    verify->add_option("--seed", vopt.seed, "Base seed");
    verify->add_option("--trials", vopt.trials, "Random exactness trials");
    verify->add_flag("--inject-fault", inject, "Shift one chunk boundary per plan (negative control)");
    verify->add_option("--threads", verify_threads, "Use threaded device execution when > 1");

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        return app.exit(e, out, err) == 0 ? 0 : 1;
    }

    try {
        if (plan->parsed()) return cmd_plan(resolve(plan_o, plan_f), out);
        if (simulate->parsed()) return cmd_simulate(resolve(sim_o, sim_f), out);
        if (sweep->parsed()) return cmd_sweep(resolve(sweep_o, sweep_f), axis, values, out);
        if (gen->parsed()) return cmd_gen(resolve(gen_o, gen_f), out);
        vopt.inject_fault = inject;
        vopt.mode = verify_threads > 1 ? ExecMode::threaded : ExecMode::serial;
        return cmd_verify(vopt, out);
    } catch (const CheckFailure& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace llep
