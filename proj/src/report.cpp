// Copyright (c) 2026, The LLEP Authors
// SPDX-License-Identifier: Apache-2.0

#include "llep/report.hpp"

#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <sstream>

#include "json.hpp"

namespace llep {

namespace {

using nlohmann::ordered_json;

std::vector<std::string> data_lines(const std::string& text, const char* header, const char* what) {
    std::vector<std::string> lines;
    std::istringstream in(text);
    std::string line;
    bool seen_header = false;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (!seen_header) {
            if (line != header) throw LlepError(std::string(what) + ": unexpected header '" + line + "'");
            seen_header = true;
            continue;
        }
        lines.push_back(line);
    }
    if (!seen_header) throw LlepError(std::string(what) + ": missing header");
    return lines;
}

std::int64_t parse_int(const std::string& text) {
    std::size_t used = 0;
    long long v = 0;
    try {
        v = std::stoll(text, &used);
    } catch (const std::exception&) {
        throw LlepError("malformed integer '" + text + "'");
    }
    if (used != text.size()) throw LlepError("malformed integer '" + text + "'");
    return v;
}

std::uint64_t parse_hex64(const std::string& text) {
    if (text.size() < 3 || text.compare(0, 2, "0x") != 0) throw LlepError("malformed fingerprint '" + text + "'");
    std::size_t used = 0;
    unsigned long long v = 0;
    try {
        v = std::stoull(text.substr(2), &used, 16);
    } catch (const std::exception&) {
        throw LlepError("malformed fingerprint '" + text + "'");
    }
    if (used != text.size() - 2) throw LlepError("malformed fingerprint '" + text + "'");
    return v;
}

std::string optional_field(const std::optional<double>& v) { return v ? format_double(*v) : std::string(); }

std::optional<double> parse_optional(const std::string& text) {
    if (text.empty()) return std::nullopt;
    return parse_double(text);
}

void check_id(const std::string& id, const char* what) {
    if (id.find_first_of(",\n\r") != std::string::npos) {
        throw LlepError(std::string(what) + " '" + id + "' contains a comma or newline");
    }
}

ordered_json config_json(const MoeConfig& c) {
    return {{"n_experts", c.n_experts}, {"top_k", c.top_k},           {"d_model", c.d_model},
            {"d_hidden", c.d_hidden},   {"world_size", c.world_size}};
}

}  // namespace

std::string format_double(double value) {
    if (std::isnan(value)) return "nan";
    if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", value);
    return buf;
}

double parse_double(const std::string& text) {
    if (text.empty()) throw LlepError("empty number field");
    char* end = nullptr;
    const double v = std::strtod(text.c_str(), &end);
    if (end != text.c_str() + text.size()) throw LlepError("malformed number '" + text + "'");
    return v;
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string::size_type start = 0;
    while (true) {
        const auto comma = line.find(',', start);
        if (comma == std::string::npos) {
            fields.push_back(line.substr(start));
            return fields;
        }
        fields.push_back(line.substr(start, comma - start));
        start = comma + 1;
    }
}

std::string hex64(std::uint64_t value) {
    char buf[24];
    std::snprintf(buf, sizeof buf, "0x%016" PRIx64, value);
    return buf;
}

const char* const kSimCsvHeader =
    "scenario_id,method,device,tokens_executed,compute_s,comm_s,total_s,peak_mem_bytes,makespan_s,speedup,mem_ratio,"
    "fingerprint";

std::string format_sim_csv(const std::vector<SimReport>& reports) {
    std::string out = std::string(kSimCsvHeader) + "\n";
    for (const auto& r : reports) {
        check_id(r.scenario_id, "scenario id");
        check_id(r.method, "method");
        const std::string prefix = r.scenario_id + "," + r.method + ",";
        const std::string fp = hex64(r.fingerprint);
        std::int64_t tokens = 0;
        for (const auto& d : r.devices) {
            tokens += d.tokens_executed;
            out += prefix + std::to_string(d.device) + "," + std::to_string(d.tokens_executed) + "," +
                   format_double(d.compute_seconds) + "," + format_double(d.comm_seconds) + "," +
                   format_double(d.total_seconds) + "," + format_double(d.peak_memory_bytes) + ",,,," + fp + "\n";
        }
        out += prefix + "all," + std::to_string(tokens) + ",,,," + format_double(r.max_peak_memory_bytes) + "," +
               format_double(r.makespan_seconds) + "," + optional_field(r.speedup) + "," +
               optional_field(r.memory_ratio) + "," + fp + "\n";
    }
    return out;
}

std::vector<SimReport> parse_sim_csv(const std::string& text) {
    std::vector<SimReport> reports;
    std::optional<SimReport> open;
    for (const auto& line : data_lines(text, kSimCsvHeader, "simulation CSV")) {
        const auto f = split_csv_line(line);
        if (f.size() != 12) throw LlepError("simulation CSV: expected 12 fields, got " + std::to_string(f.size()));
        if (!open) {
            open.emplace();
            open->scenario_id = f[0];
            open->method = f[1];
            open->fingerprint = parse_hex64(f[11]);
        } else if (open->scenario_id != f[0] || open->method != f[1] || open->fingerprint != parse_hex64(f[11])) {
            throw LlepError("simulation CSV: report for " + open->scenario_id + "/" + open->method +
                            " has no aggregate row");
        }
        if (f[2] == "all") {
            open->max_peak_memory_bytes = parse_double(f[7]);
            open->makespan_seconds = parse_double(f[8]);
            open->speedup = parse_optional(f[9]);
            open->memory_ratio = parse_optional(f[10]);
            reports.push_back(std::move(*open));
            open.reset();
            continue;
        }
        DeviceCost d;
        d.device = static_cast<int>(parse_int(f[2]));
        d.tokens_executed = parse_int(f[3]);
        d.compute_seconds = parse_double(f[4]);
        d.comm_seconds = parse_double(f[5]);
        d.total_seconds = parse_double(f[6]);
        d.peak_memory_bytes = parse_double(f[7]);
        open->devices.push_back(d);
    }
    if (open) throw LlepError("simulation CSV: trailing report without aggregate row");
    return reports;
}

const char* const kSweepCsvHeader =
    "axis,axis_value,scenario_id,n_experts,d_hidden,tokens_per_device,alpha,lambda,ep_makespan_s,llep_makespan_s,"
    "speedup,ep_peak_mem_bytes,llep_peak_mem_bytes,mem_ratio,used_lla,force_count";

std::string format_sweep_csv(const std::vector<SweepRow>& rows) {
    std::string out = std::string(kSweepCsvHeader) + "\n";
    for (const auto& r : rows) {
        check_id(r.axis, "axis");
        check_id(r.scenario_id, "scenario id");
        out += r.axis + "," + format_double(r.axis_value) + "," + r.scenario_id + "," + std::to_string(r.n_experts) +
               "," + std::to_string(r.d_hidden) + "," + std::to_string(r.tokens_per_device) + "," +
               format_double(r.alpha) + "," + format_double(r.lambda) + "," + format_double(r.ep_makespan_s) + "," +
               format_double(r.llep_makespan_s) + "," + format_double(r.speedup) + "," +
               format_double(r.ep_peak_mem_bytes) + "," + format_double(r.llep_peak_mem_bytes) + "," +
               format_double(r.mem_ratio) + "," + (r.used_lla ? "1" : "0") + "," + std::to_string(r.force_count) +
               "\n";
    }
    return out;
}

std::vector<SweepRow> parse_sweep_csv(const std::string& text) {
    std::vector<SweepRow> rows;
    for (const auto& line : data_lines(text, kSweepCsvHeader, "sweep CSV")) {
        const auto f = split_csv_line(line);
        if (f.size() != 16) throw LlepError("sweep CSV: expected 16 fields, got " + std::to_string(f.size()));
        SweepRow r;
        r.axis = f[0];
        r.axis_value = parse_double(f[1]);
        r.scenario_id = f[2];
        r.n_experts = static_cast<int>(parse_int(f[3]));
        r.d_hidden = static_cast<int>(parse_int(f[4]));
        r.tokens_per_device = parse_int(f[5]);
        r.alpha = parse_double(f[6]);
        r.lambda = parse_double(f[7]);
        r.ep_makespan_s = parse_double(f[8]);
        r.llep_makespan_s = parse_double(f[9]);
        r.speedup = parse_double(f[10]);
        r.ep_peak_mem_bytes = parse_double(f[11]);
        r.llep_peak_mem_bytes = parse_double(f[12]);
        r.mem_ratio = parse_double(f[13]);
        if (f[14] != "0" && f[14] != "1") throw LlepError("sweep CSV: used_lla must be 0 or 1");
        r.used_lla = f[14] == "1";
        r.force_count = static_cast<int>(parse_int(f[15]));
        rows.push_back(std::move(r));
    }
    return rows;
}

namespace {

ordered_json plan_json(const PlanDocument& doc) {
    ordered_json chunks = ordered_json::array();
    for (std::size_t i = 0; i < doc.plan.per_expert.size(); ++i) {
        for (const auto& c : doc.plan.per_expert[i]) {
            chunks.push_back({{"expert", i}, {"device", c.device}, {"start", c.start}, {"end", c.end}});
        }
    }
    ordered_json transfers = ordered_json::array();
    for (const auto& t : doc.transfers.transfers) {
        transfers.push_back({{"expert", t.expert}, {"src", t.src_device}, {"dst", t.dst_device}});
    }
    return {{"record_id", doc.record_id},
            {"config", config_json(doc.config)},
            {"planner", {{"alpha", doc.planner.alpha}, {"min_chunk", doc.planner.min_chunk}, {"lambda", doc.planner.lambda}}},
            {"loads", doc.global_loads},
            {"imbalance_ratio", doc.imbalance_ratio},
            {"balanced_fallback", doc.balanced_fallback},
            {"capacity", doc.plan.capacity},
            {"force_count", doc.plan.force_count},
            {"assigned_load", doc.plan.assigned_load},
            {"chunks", chunks},
            {"transfers", transfers}};
}

}  // namespace

std::string plan_document_json(const PlanDocument& doc) { return plan_json(doc).dump(2) + "\n"; }

std::string plan_documents_json(const std::vector<PlanDocument>& docs) {
    ordered_json arr = ordered_json::array();
    for (const auto& d : docs) arr.push_back(plan_json(d));
    return arr.dump(2) + "\n";
}

std::string plan_document_text(const PlanDocument& doc) {
    std::string out = "record " + doc.record_id + " loads=";
    for (std::size_t i = 0; i < doc.global_loads.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(doc.global_loads[i]);
    }
    out += " imbalance=" + format_double(doc.imbalance_ratio) + "\n";
    if (doc.balanced_fallback) out += "balanced: EP fallback\n";
    for (std::size_t i = 0; i < doc.plan.per_expert.size(); ++i) {
        for (const auto& c : doc.plan.per_expert[i]) {
            out += "chunk expert=" + std::to_string(i) + " device=" + std::to_string(c.device) +
                   " start=" + std::to_string(c.start) + " end=" + std::to_string(c.end) + "\n";
        }
    }
    for (const auto& t : doc.transfers.transfers) {
        out += "transfer expert=" + std::to_string(t.expert) + " src=" + std::to_string(t.src_device) +
               " dst=" + std::to_string(t.dst_device) + "\n";
    }
    return out;
}

std::string manifest_json(const std::string& command, const std::string& run_config_json, std::uint64_t seed,
                          const CostParams& cost, const std::vector<std::string>& outputs) {
    ordered_json j;
    j["command"] = command;
    j["seed"] = seed;
    j["run_config"] = ordered_json::parse(run_config_json);
    j["cost_params"] = ordered_json::parse(cost_params_to_json_text(cost));
    j["cost_params_hash"] = hex64(cost_params_hash(cost));
    j["outputs"] = outputs;
    return j.dump(2) + "\n";
}

}  // namespace llep
