// Copyright (c) 2026, The LLEP Authors
// SPDX-License-Identifier: Apache-2.0

#include "llep/app.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <sstream>
#include <thread>

#include "json.hpp"

namespace llep {

namespace {

using nlohmann::json;
using nlohmann::ordered_json;

struct Workload {
    std::string id;
    LoadMatrix loads;
};

struct Evaluated {
    SimReport report;
    bool used_lla = false;
    int force_count = 0;
};

std::vector<Method> selected_methods(MethodSelector m) {
    switch (m) {
        case MethodSelector::ep: return {Method::ep};
        case MethodSelector::llep: return {Method::llep};
        case MethodSelector::both: break;
    }
    return {Method::ep, Method::llep};
}

template <typename T>
T read_number(const json& j, const char* key) {
    const auto& v = j.at(key);
    if (!v.is_number()) throw LlepError(std::string("run config '") + key + "' must be a number");
    if constexpr (std::is_integral_v<T>) {
        if (!v.is_number_integer()) throw LlepError(std::string("run config '") + key + "' must be an integer");
    }
    return v.get<T>();
}

std::string read_string(const json& j, const char* key) {
    const auto& v = j.at(key);
    if (!v.is_string()) throw LlepError(std::string("run config '") + key + "' must be a string");
    return v.get<std::string>();
}

bool read_bool(const json& j, const char* key) {
    const auto& v = j.at(key);
    if (!v.is_boolean()) throw LlepError(std::string("run config '") + key + "' must be a boolean");
    return v.get<bool>();
}

}  // namespace

std::vector<std::int64_t> parse_load_list(const std::string& text) {
    std::vector<std::int64_t> out;
    for (const auto& field : split_csv_line(text)) {
        std::size_t used = 0;
        long long v = -1;
        try {
            v = std::stoll(field, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used == 0 || used != field.size() || v < 0) throw LlepError("malformed load '" + field + "'");
        out.push_back(v);
    }
    return out;
}

namespace {

void write_file(const std::filesystem::path& path, const std::string& content) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw LlepError("cannot write " + path.string());
    f << content;
    if (!f) throw LlepError("cannot write " + path.string());
}

std::filesystem::path prepare_out_dir(const std::string& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec || !std::filesystem::is_directory(dir)) throw LlepError("output directory " + dir + " is not writable");
    return dir;
}

ExecOptions exec_options(const RunConfig& run) {
    ExecOptions o;
    o.mode = run.threads > 1 ? ExecMode::threaded : ExecMode::serial;
    return o;
}

// Only LLA plans promise the capacity bound; native plans are checked structurally by the schedule.
void check_plan(const PlannedStep& step, const LoadMatrix& loads, const MoeConfig& config, const std::string& id) {
    if (!step.metrics.used_lla) return;
    const auto violated = check_plan_invariants(step.plan, step.transfers, loads.global_loads, config);
    if (violated.empty()) return;
    std::string names;
    for (const auto& v : violated) names += (names.empty() ? "" : ",") + v;
    throw CheckFailure("plan invariant violated for " + id + ": " + names);
}

// Direct load matrices (no tensor data): inline loads, trace records, or the slot-level scenario draw.
std::vector<Workload> load_workloads(const RunConfig& run) {
    if (!run.trace_path.empty()) {
        std::vector<Workload> out;
        for (auto& rec : load_trace(run.trace_path, run.config)) out.push_back({rec.record_id, std::move(rec.loads)});
        if (out.empty()) throw LlepError("trace " + run.trace_path + " has no records");
        return out;
    }
    const Scenario s = make_scenario(run);
    return {{s.id(), scenario_load_matrix(s)}};
}

std::vector<Evaluated> evaluate_direct(const RunConfig& run, const CostParams& cost) {
    std::vector<Evaluated> out;
    for (const auto& w : load_workloads(run)) {
        std::optional<SimReport> ep_report;
        for (Method m : selected_methods(run.method)) {
            const PlannedStep step = plan_step(w.loads, run.config, run.planner, m);
            check_plan(step, w.loads, run.config, w.id);
            Evaluated e{build_report(step.metrics, cost, to_string(m), w.id), step.metrics.used_lla,
                        step.plan.force_count};
            if (m == Method::ep) ep_report = e.report;
            if (m == Method::llep && ep_report) {
                const Comparison c = compare(*ep_report, e.report);
                e.report.speedup = c.speedup;
                e.report.memory_ratio = c.memory_ratio;
            }
            out.push_back(std::move(e));
        }
    }
    return out;
}

std::vector<Evaluated> evaluate_dense(const RunConfig& run, const CostParams& cost) {
    const std::int64_t need = dense_element_count(run);
    if (need > run.element_budget) {
        throw LlepError("dense simulation needs " + std::to_string(need) + " elements, above the element budget of " +
                        std::to_string(run.element_budget) + "; use --cost-only or raise --element-budget");
    }
    const Scenario s = make_scenario(run);
    auto routed = generate_routing(s);
    std::vector<TokenBatch> batches;
    std::vector<RouterOutput> routings;
    for (auto& rb : routed) {
        batches.push_back(std::move(rb.batch));
        routings.push_back(std::move(rb.routing));
    }
    const ModelParams params = init_model_params(run.config, run.seed);
    const auto reference = reference_forward(batches, routings, params, run.config);

    std::vector<Evaluated> out;
    std::optional<SimReport> ep_report;
    for (Method m : selected_methods(run.method)) {
        const ExecResult r = m == Method::ep
                                 ? ep_dispatch_combine(batches, routings, params, run.config, exec_options(run))
                                 : llep_dispatch_combine(batches, routings, params, run.config, run.planner,
                                                         exec_options(run));
        double worst = 0.0;
        for (std::size_t p = 0; p < reference.size(); ++p) {
            worst = std::max(worst, max_abs_diff(reference[p], r.outputs[p]));
        }
        if (!(worst <= 1e-10)) {
            throw CheckFailure(std::string("exactness check failed: ") + to_string(m) + " differs from the reference by " +
                               format_double(worst));
        }
        Evaluated e{build_report(r.metrics, cost, to_string(m), s.id()), r.metrics.used_lla, r.plan.force_count};
        if (m == Method::ep) ep_report = e.report;
        if (m == Method::llep && ep_report) {
            const Comparison c = compare(*ep_report, e.report);
            e.report.speedup = c.speedup;
            e.report.memory_ratio = c.memory_ratio;
        }
        out.push_back(std::move(e));
    }
    return out;
}

std::vector<Evaluated> evaluate(const RunConfig& run) {
    const CostParams cost = resolve_cost_params(run);
    if (run.cost_only || !run.trace_path.empty()) return evaluate_direct(run, cost);
    return evaluate_dense(run, cost);
}

bool is_integral_value(double v) { return std::isfinite(v) && v == std::floor(v); }

RunConfig apply_axis(RunConfig run, const std::string& axis, double value) {
    auto as_int = [&](const char* what) {
        if (!is_integral_value(value) || value < 1 || value > 1e12) {
            throw LlepError(std::string(what) + " sweep value " + format_double(value) + " must be a positive integer");
        }
        return static_cast<std::int64_t>(value);
    };
    if (axis == "alpha") {
        run.planner.alpha = value;
    } else if (axis == "lambda") {
        run.planner.lambda = value;
    } else if (axis == "batch") {
        run.tokens_per_device = as_int("batch");
    } else if (axis == "hidden") {
        run.config.d_model = run.config.d_hidden = static_cast<int>(as_int("hidden"));
    } else if (axis == "experts") {
        run.config.n_experts = static_cast<int>(as_int("experts"));
    } else {
        throw LlepError("unknown sweep axis '" + axis + "'");
    }
    return run;
}

std::string join_ids(const std::vector<std::string>& names) {
    std::string out;
    for (const auto& n : names) out += (out.empty() ? "" : ", ") + n;
    return out;
}

}  // namespace

MethodSelector parse_method(const std::string& text) {
    if (text == "ep") return MethodSelector::ep;
    if (text == "llep") return MethodSelector::llep;
    if (text == "both") return MethodSelector::both;
    throw LlepError("unknown method '" + text + "' (expected ep, llep or both)");
}

const char* to_string(MethodSelector method) {
    switch (method) {
        case MethodSelector::ep: return "ep";
        case MethodSelector::llep: return "llep";
        case MethodSelector::both: break;
    }
    return "both";
}

RunConfig run_config_from_json_text(const std::string& text, RunConfig run) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw LlepError(std::string("run config is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw LlepError("run config must be a JSON object");
    static const std::vector<std::string> known = {
        "n_experts", "top_k", "d_model",  "d_hidden", "world_size", "tokens_per_device", "hot_fraction",
        "hot_count", "balanced", "alpha", "min_chunk", "lambda",     "seed",              "method",
        "profile",   "cost_file", "out",  "trace",    "loads",      "cost_only",         "element_budget",
        "threads"};
    for (const auto& [key, _] : j.items()) {
        if (std::find(known.begin(), known.end(), key) == known.end()) {
            throw LlepError("unknown run config key '" + key + "'");
        }
    }
    if (j.contains("n_experts")) run.config.n_experts = read_number<int>(j, "n_experts");
    if (j.contains("top_k")) run.config.top_k = read_number<int>(j, "top_k");
    if (j.contains("d_model")) run.config.d_model = read_number<int>(j, "d_model");
    if (j.contains("d_hidden")) run.config.d_hidden = read_number<int>(j, "d_hidden");
    if (j.contains("world_size")) run.config.world_size = read_number<int>(j, "world_size");
    if (j.contains("tokens_per_device")) run.tokens_per_device = read_number<std::int64_t>(j, "tokens_per_device");
    if (j.contains("hot_fraction")) run.hot_fraction = read_number<double>(j, "hot_fraction");
    if (j.contains("hot_count")) run.hot_count = read_number<int>(j, "hot_count");
    if (j.contains("balanced")) {
        run.mode = read_bool(j, "balanced") ? ScenarioMode::balanced : ScenarioMode::concentrated;
    }
    if (j.contains("alpha")) run.planner.alpha = read_number<double>(j, "alpha");
    if (j.contains("min_chunk")) run.planner.min_chunk = read_number<std::int64_t>(j, "min_chunk");
    if (j.contains("lambda")) run.planner.lambda = read_number<double>(j, "lambda");
    if (j.contains("seed")) {
        if (!j.at("seed").is_number_unsigned()) throw LlepError("run config 'seed' must be a nonnegative integer");
        run.seed = j.at("seed").get<std::uint64_t>();
    }
    if (j.contains("method")) run.method = parse_method(read_string(j, "method"));
    if (j.contains("profile")) run.profile = read_string(j, "profile");
    if (j.contains("cost_file")) run.cost_file = read_string(j, "cost_file");
    if (j.contains("out")) run.out_dir = read_string(j, "out");
    if (j.contains("trace")) run.trace_path = read_string(j, "trace");
    if (j.contains("loads")) {
        const auto& v = j.at("loads");
        if (v.is_string()) {
            run.loads = parse_load_list(v.get<std::string>());
        } else if (v.is_array()) {
            run.loads.clear();
            for (const auto& x : v) {
                if (!x.is_number_unsigned()) throw LlepError("run config 'loads' must hold nonnegative integers");
                run.loads.push_back(x.get<std::int64_t>());
            }
        } else {
            throw LlepError("run config 'loads' must be a string or an array");
        }
    }
    if (j.contains("cost_only")) run.cost_only = read_bool(j, "cost_only");
    if (j.contains("element_budget")) run.element_budget = read_number<std::int64_t>(j, "element_budget");
    if (j.contains("threads")) run.threads = read_number<int>(j, "threads");
    return run;
}

RunConfig load_run_config(const std::string& path, RunConfig base) {
    std::ifstream in(path);
    if (!in) throw LlepError("cannot open run config " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return run_config_from_json_text(ss.str(), std::move(base));
}

std::string run_config_to_json_text(const RunConfig& run) {
    ordered_json j;
    j["n_experts"] = run.config.n_experts;
    j["top_k"] = run.config.top_k;
    j["d_model"] = run.config.d_model;
    j["d_hidden"] = run.config.d_hidden;
    j["world_size"] = run.config.world_size;
    j["tokens_per_device"] = run.tokens_per_device;
    j["balanced"] = run.mode == ScenarioMode::balanced;
    j["hot_fraction"] = run.hot_fraction;
    j["hot_count"] = run.hot_count;
    j["alpha"] = run.planner.alpha;
    j["min_chunk"] = run.planner.min_chunk;
    j["lambda"] = run.planner.lambda;
    j["seed"] = run.seed;
    j["method"] = to_string(run.method);
    j["profile"] = run.profile;
    if (run.cost_file) j["cost_file"] = *run.cost_file;
    if (!run.trace_path.empty()) j["trace"] = run.trace_path;
    if (!run.loads.empty()) j["loads"] = run.loads;
    j["cost_only"] = run.cost_only;
    j["element_budget"] = run.element_budget;
    return j.dump(2);
}

Scenario make_scenario(const RunConfig& run) {
    Scenario s;
    s.config = run.config;
    s.mode = run.mode;
    s.hot_expert_count = run.hot_count;
    s.hot_fraction = run.hot_fraction;
    s.tokens_per_device = run.tokens_per_device;
    s.seed = run.seed;
    validate_scenario(s);
    return s;
}

CostParams resolve_cost_params(const RunConfig& run) {
    CostParams p = run.cost_file ? load_cost_params(*run.cost_file) : cost_profile(run.profile);
    validate_cost_params(p);
    return p;
}

std::int64_t dense_element_count(const RunConfig& run) {
    const double n = run.config.n_experts;
    const double k = run.config.top_k;
    const double d = run.config.d_model;
    const double h = run.config.d_hidden;
    const double tokens = static_cast<double>(run.config.world_size) * static_cast<double>(run.tokens_per_device);
    // tokens + sorted copies + gates + reference, EP and LLEP outputs + all expert weights + router
    const double total = tokens * (d + k * (d + 1.0) + 3.0 * h) + n * d * h + d * n;
    return total >= 9.0e18 ? std::int64_t{9'000'000'000'000'000'000} : static_cast<std::int64_t>(total);
}

std::vector<PlanDocument> build_plan_documents(const RunConfig& input) {
    RunConfig run = input;
    std::vector<Workload> workloads;
    if (!run.loads.empty()) {
        run.config.n_experts = static_cast<int>(run.loads.size());
        run.config.top_k = std::min(run.config.top_k, run.config.n_experts);
        validate_config(run.config, run.planner);
        std::vector<std::vector<std::int64_t>> rows(static_cast<std::size_t>(run.config.world_size),
                                                    std::vector<std::int64_t>(run.loads.size(), 0));
        rows[0] = run.loads;
        workloads.push_back({"inline", gather_loads(rows, run.config)});
    } else {
        workloads = load_workloads(run);
    }
    std::vector<PlanDocument> docs;
    for (const auto& w : workloads) {
        const PlannedStep step = plan_step(w.loads, run.config, run.planner, Method::llep);
        check_plan(step, w.loads, run.config, w.id);
        PlanDocument doc;
        doc.record_id = w.id;
        doc.config = run.config;
        doc.planner = run.planner;
        doc.global_loads = w.loads.global_loads;
        doc.imbalance_ratio = imbalance_ratio(w.loads.global_loads);
        doc.balanced_fallback = step.balanced_fallback;
        doc.plan = step.plan;
        doc.transfers = step.transfers;
        docs.push_back(std::move(doc));
    }
    return docs;
}

std::vector<SimReport> build_sim_reports(const RunConfig& run) {
    std::vector<SimReport> out;
    for (auto& e : evaluate(run)) out.push_back(std::move(e.report));
    return out;
}

const std::vector<std::string> kSweepAxes = {"alpha", "lambda", "batch", "hidden", "experts"};

std::vector<SweepRow> build_sweep_rows(const RunConfig& input, const std::string& axis,
                                       const std::vector<double>& values) {
    if (std::find(kSweepAxes.begin(), kSweepAxes.end(), axis) == kSweepAxes.end()) {
        throw LlepError("unknown sweep axis '" + axis + "' (expected " + join_ids(kSweepAxes) + ")");
    }
    if (values.empty()) throw LlepError("sweep needs at least one value");
    if (!input.trace_path.empty()) throw LlepError("sweeps run on the scenario, not on a trace");
    RunConfig base = input;
    base.method = MethodSelector::both;

    // Validate every point before starting any work.
    std::vector<RunConfig> points;
    for (double v : values) {
        RunConfig p = apply_axis(base, axis, v);
        p.threads = 1;
        validate_config(p.config, p.planner);
        make_scenario(p);
        points.push_back(std::move(p));
    }

    std::vector<SweepRow> rows(points.size());
    std::vector<std::exception_ptr> errors(points.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < points.size(); i = next++) {
            try {
                const RunConfig& p = points[i];
                const auto evaluated = evaluate(p);
                const Evaluated& ep = evaluated.at(0);
                const Evaluated& ll = evaluated.at(1);
                SweepRow r;
                r.axis = axis;
                r.axis_value = values[i];
                r.scenario_id = ll.report.scenario_id;
                r.n_experts = p.config.n_experts;
                r.d_hidden = p.config.d_hidden;
                r.tokens_per_device = p.tokens_per_device;
                r.alpha = p.planner.alpha;
                r.lambda = p.planner.lambda;
                r.ep_makespan_s = ep.report.makespan_seconds;
                r.llep_makespan_s = ll.report.makespan_seconds;
                r.speedup = ll.report.speedup.value_or(1.0);
                r.ep_peak_mem_bytes = ep.report.max_peak_memory_bytes;
                r.llep_peak_mem_bytes = ll.report.max_peak_memory_bytes;
                r.mem_ratio = ll.report.memory_ratio.value_or(1.0);
                r.used_lla = ll.used_lla;
                r.force_count = ll.force_count;
                rows[i] = std::move(r);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    const int workers = std::clamp(input.threads, 1, static_cast<int>(points.size()));
    {
        std::vector<std::jthread> pool;
        for (int w = 1; w < workers; ++w) pool.emplace_back(worker);
        worker();
    }
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
    std::stable_sort(rows.begin(), rows.end(),
                     [](const SweepRow& a, const SweepRow& b) { return a.axis_value < b.axis_value; });
    return rows;
}

int cmd_plan(const RunConfig& run, std::ostream& out) {
    const auto docs = build_plan_documents(run);
    for (const auto& d : docs) out << plan_document_text(d);
    if (!run.out_dir.empty()) {
        const auto dir = prepare_out_dir(run.out_dir);
        write_file(dir / "plans.json", plan_documents_json(docs));
        write_file(dir / "manifest.json", manifest_json("plan", run_config_to_json_text(run), run.seed,
                                                        resolve_cost_params(run), {"plans.json"}));
    }
    return 0;
}

int cmd_simulate(const RunConfig& run, std::ostream& out) {
    const auto reports = build_sim_reports(run);
    const std::string csv = format_sim_csv(reports);
    if (run.out_dir.empty()) {
        out << csv;
        return 0;
    }
    const auto dir = prepare_out_dir(run.out_dir);
    write_file(dir / "sim.csv", csv);
    write_file(dir / "manifest.json",
               manifest_json("simulate", run_config_to_json_text(run), run.seed, resolve_cost_params(run), {"sim.csv"}));
    for (const auto& r : reports) {
        out << r.scenario_id << " " << r.method << " makespan_s=" << format_double(r.makespan_seconds)
            << " peak_mem_bytes=" << format_double(r.max_peak_memory_bytes);
        if (r.speedup) out << " speedup=" << format_double(*r.speedup);
        if (r.memory_ratio) out << " mem_ratio=" << format_double(*r.memory_ratio);
        out << "\n";
    }
    return 0;
}

int cmd_sweep(const RunConfig& run, const std::string& axis, const std::vector<double>& values, std::ostream& out) {
    const auto rows = build_sweep_rows(run, axis, values);
    const std::string csv = format_sweep_csv(rows);
    if (run.out_dir.empty()) {
        out << csv;
        return 0;
    }
    const auto dir = prepare_out_dir(run.out_dir);
    const std::string name = "sweep_" + axis + ".csv";
    write_file(dir / name, csv);
    ordered_json cfg = ordered_json::parse(run_config_to_json_text(run));
    cfg["sweep_axis"] = axis;
    cfg["sweep_values"] = values;
    write_file(dir / ("manifest_" + axis + ".json"),
               manifest_json("sweep", cfg.dump(2), run.seed, resolve_cost_params(run), {name}));
    for (const auto& r : rows) {
        out << axis << "=" << format_double(r.axis_value) << " speedup=" << format_double(r.speedup)
            << " mem_ratio=" << format_double(r.mem_ratio) << "\n";
    }
    return 0;
}

int cmd_verify(const VerifyOptions& options, std::ostream& out) {
    const VerifyReport report = run_verify(options);
    out << format_verify_report(report);
    return report.ok() ? 0 : 2;
}

int cmd_gen(const RunConfig& run, std::ostream& out) {
    const Scenario s = make_scenario(run);
    const double token_elements = static_cast<double>(run.config.world_size) *
                                  static_cast<double>(run.tokens_per_device) * run.config.d_model;
    if (token_elements > static_cast<double>(run.element_budget)) {
        throw LlepError("generating tokens needs " + format_double(token_elements) +
                        " elements, above the element budget of " + std::to_string(run.element_budget));
    }
    const auto routed = generate_routing(s);
    std::string routing = "device,token,slot,expert,gate\n";
    for (const auto& rb : routed) {
        const auto& r = rb.routing;
        for (std::size_t t = 0; t < r.num_tokens(); ++t) {
            for (int k = 0; k < r.top_k; ++k) {
                routing += std::to_string(r.device_id) + "," + std::to_string(t) + "," + std::to_string(k) + "," +
                           std::to_string(r.index(t, k)) + "," + format_double(r.gate(t, k)) + "\n";
            }
        }
    }
    const std::string trace = "# " + s.id() + " seed=" + std::to_string(run.seed) + "\n" +
                              format_trace_record(s.id(), count_loads(routed, run.config.n_experts)) + "\n";
    if (run.out_dir.empty()) {
        out << routing;
        return 0;
    }
    const auto dir = prepare_out_dir(run.out_dir);
    write_file(dir / "routing.csv", routing);
    write_file(dir / "trace.csv", trace);
    write_file(dir / "manifest.json", manifest_json("gen", run_config_to_json_text(run), run.seed,
                                                    resolve_cost_params(run), {"routing.csv", "trace.csv"}));
    out << "wrote routing.csv and trace.csv to " << run.out_dir << "\n";
    return 0;
}

}  // namespace llep
