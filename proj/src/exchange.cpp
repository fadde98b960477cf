// Copyright (c) 2026, The LLEP Authors
// SPDX-License-Identifier: Apache-2.0

#include "exchange.hpp"

#include <algorithm>
#include <exception>
#include <numeric>
#include <thread>

namespace llep::detail {

void for_each_device(int world, ExecMode mode, const std::function<void(int)>& fn) {
    if (mode == ExecMode::serial || world <= 1) {
        for (int p = 0; p < world; ++p) fn(p);
        return;
    }
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(world));
    {
        std::vector<std::jthread> workers;
        workers.reserve(static_cast<std::size_t>(world));
        for (int p = 0; p < world; ++p) {
            workers.emplace_back([&, p] {
                try {
                    fn(p);
                } catch (...) {
                    errors[static_cast<std::size_t>(p)] = std::current_exception();
                }
            });
        }
    }
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
}

void check_inputs(std::span<const TokenBatch> batches, std::span<const RouterOutput> routings, const MoeConfig& config) {
    validate_config(config);
    if (static_cast<int>(batches.size()) != config.world_size || static_cast<int>(routings.size()) != config.world_size) {
        throw LlepError("expected one batch and one routing per device");
    }
    for (int p = 0; p < config.world_size; ++p) {
        const auto& b = batches[static_cast<std::size_t>(p)];
        const auto& r = routings[static_cast<std::size_t>(p)];
        if (b.device_id != p || r.device_id != p) throw LlepError("batch/routing device ids must match their position");
        if (b.tokens.rows() > 0 && b.tokens.cols() != static_cast<std::size_t>(config.d_model)) {
            throw LlepError("token width does not match D");
        }
        validate_routing(r, config);
        if (r.num_tokens() != b.tokens.rows()) throw LlepError("routing rows do not match batch rows");
    }
}

StepRunner::StepRunner(std::span<const TokenBatch> batches, std::span<const RouterOutput> routings,
                       const ModelParams& params, const MoeConfig& config, const ExecOptions& options)
    : batches_(batches), routings_(routings), params_(params), config_(config), options_(options) {
    check_inputs(batches, routings, config);
    if (static_cast<int>(params.expert_weights.size()) != config.n_experts) throw LlepError("expected N expert weights");
    for (const auto& w : params.expert_weights) {
        if (w.rows() != static_cast<std::size_t>(config.d_model) || w.cols() != static_cast<std::size_t>(config.d_hidden)) {
            throw LlepError("expert weights are not D x H");
        }
    }
    const auto world = static_cast<std::size_t>(config.world_size);
    sorted_.resize(world);
    offsets_.resize(world);
    inbox_.assign(world, std::vector<std::vector<Parcel>>(world));
    imported_.resize(world);
    messages_.resize(world);
    gemms_.resize(world);
    sent_.assign(world, 0);
    received_.assign(world, 0);
}

void StepRunner::sort_local() {
    for_each_device(world(), options_.mode, [&](int p) {
        const auto pi = static_cast<std::size_t>(p);
        sorted_[pi] = sort_reindex(batches_[pi], routings_[pi]);
        offsets_[pi] = sorted_[pi].expert_offsets();
    });
}

LoadMatrix StepRunner::gather() const {
    std::vector<std::vector<std::int64_t>> rows;
    rows.reserve(sorted_.size());
    for (const auto& s : sorted_) rows.push_back(s.per_expert_counts);
    return gather_loads(rows, config_);
}

void StepRunner::plan_everywhere(const LoadMatrix& loads, const PlannerConfig& planner, bool use_lla) {
    const auto world_sz = static_cast<std::size_t>(world());
    std::vector<AssignmentPlan> plans(world_sz);
    std::vector<WeightTransferPlan> transfers(world_sz);
    for_each_device(world(), options_.mode, [&](int p) {
        const auto pi = static_cast<std::size_t>(p);
        if (use_lla) {
            std::tie(plans[pi], transfers[pi]) = lla_plan(loads.global_loads, config_, planner);
        } else {
            plans[pi] = native_plan(loads.global_loads, config_);
        }
    });
    for (std::size_t p = 1; p < world_sz; ++p) {
        if (!(plans[p] == plans[0]) || !(transfers[p] == transfers[0])) {
            throw LlepError("devices computed different plans");
        }
    }
    install(std::move(plans[0]), std::move(transfers[0]), loads);
}

void StepRunner::install(AssignmentPlan plan, WeightTransferPlan transfers, const LoadMatrix& loads) {
    schedule_ = materialize_send_schedule(plan, loads, config_);
    if (!(transfers == build_weight_transfers(plan, config_))) {
        throw LlepError("weight transfer plan does not match the assignment plan");
    }
    plan_ = std::move(plan);
    transfers_ = std::move(transfers);
    loads_ = loads;
}

void StepRunner::dispatch(std::span<const Matrix> upstream) {
    const bool backward = !upstream.empty();
    const auto d = static_cast<std::size_t>(config_.d_model);
    const auto h = static_cast<std::size_t>(config_.d_hidden);
    const auto k = static_cast<std::size_t>(config_.top_k);
    for_each_device(world(), options_.mode, [&](int p) {
        const auto pi = static_cast<std::size_t>(p);
        const auto& sorted = sorted_[pi];
        for (const auto& slice : schedule_.per_source[pi]) {
            const auto rows = static_cast<std::size_t>(slice.size());
            const auto base = static_cast<std::size_t>(offsets_[pi][static_cast<std::size_t>(slice.expert)] + slice.local_start);
            Parcel parcel;
            parcel.src = p;
            parcel.expert = slice.expert;
            parcel.local_start = slice.local_start;
            parcel.tokens = Matrix(rows, d);
            parcel.gates.resize(rows);
            if (backward) parcel.upstream = Matrix(rows, h);
            for (std::size_t r = 0; r < rows; ++r) {
                auto src = sorted.sorted_tokens.row(base + r);
                std::copy(src.begin(), src.end(), parcel.tokens.row(r).begin());
                parcel.gates[r] = sorted.sorted_gates[base + r];
                if (backward) {
                    auto g = upstream[pi].row(sorted.permutation[base + r] / k);
                    std::copy(g.begin(), g.end(), parcel.upstream.row(r).begin());
                }
            }
            if (slice.dst_device != p) {
                sent_[pi] += slice.size();
                record_message(p, {MessageKind::dispatch, p, slice.dst_device, slice.expert, slice.size(),
                                   slice.size() * static_cast<std::int64_t>(d + 1)});
            }
            inbox_[static_cast<std::size_t>(slice.dst_device)][pi].push_back(std::move(parcel));
        }
    });
    for_each_device(world(), options_.mode, [&](int dst) {
        for (int src = 0; src < world(); ++src) {
            if (src == dst) continue;
            for (const auto& parcel : inbox_[static_cast<std::size_t>(dst)][static_cast<std::size_t>(src)]) {
                received_[static_cast<std::size_t>(dst)] += static_cast<std::int64_t>(parcel.tokens.rows());
            }
        }
    });
}

void StepRunner::import_weights() {
    const auto elements = static_cast<std::int64_t>(config_.d_model) * config_.d_hidden;
    for_each_device(world(), options_.mode, [&](int dst) {
        auto& store = imported_[static_cast<std::size_t>(dst)];
        for (const auto& t : transfers_.transfers) {
            if (t.dst_device != dst) continue;
            // P2P copy out of the native device's resident set.
            store.emplace(t.expert, params_.expert_weights[static_cast<std::size_t>(t.expert)]);
            record_message(dst, {MessageKind::weight, t.src_device, dst, t.expert, 1, elements});
        }
    });
}

std::vector<ExpertWork> StepRunner::assemble(int device) const {
    const auto di = static_cast<std::size_t>(device);
    const auto d = static_cast<std::size_t>(config_.d_model);
    const auto h = static_cast<std::size_t>(config_.d_hidden);

    std::map<int, ExpertWork> by_expert;
    for (int src = 0; src < world(); ++src) {
        for (const auto& parcel : inbox_[di][static_cast<std::size_t>(src)]) {
            auto& work = by_expert[parcel.expert];
            work.expert = parcel.expert;
            work.foreign = config_.native_device(parcel.expert) != device;
            work.parts.push_back(&parcel);
        }
    }

    std::vector<ExpertWork> out;
    out.reserve(by_expert.size());
    for (auto& [expert, work] : by_expert) {
        std::size_t rows = 0;
        bool backward = false;
        for (const auto* part : work.parts) {
            rows += part->tokens.rows();
            backward = backward || !part->upstream.empty();
        }
        work.tokens = Matrix(rows, d);
        work.gates.reserve(rows);
        if (backward) work.upstream = Matrix(rows, h);
        std::size_t r = 0;
        for (const auto* part : work.parts) {
            for (std::size_t i = 0; i < part->tokens.rows(); ++i, ++r) {
                auto src = part->tokens.row(i);
                std::copy(src.begin(), src.end(), work.tokens.row(r).begin());
                work.gates.push_back(part->gates[i]);
                if (backward) {
                    auto g = part->upstream.row(i);
                    std::copy(g.begin(), g.end(), work.upstream.row(r).begin());
                }
            }
        }
        out.push_back(std::move(work));
    }
    return out;
}

const Matrix& StepRunner::weights_for(int device, int expert) const {
    if (config_.native_device(expert) == device) return params_.expert_weights[static_cast<std::size_t>(expert)];
    const auto& store = imported_[static_cast<std::size_t>(device)];
    auto it = store.find(expert);
    if (it == store.end()) {
        throw LlepError("device " + std::to_string(device) + " received tokens for expert " + std::to_string(expert) +
                        " without its weights");
    }
    return it->second;
}

void StepRunner::clear_imports() {
    for (auto& store : imported_) store.clear();
}

StepMetrics StepRunner::collect_metrics(bool used_lla, double ratio) const {
    StepMetrics m;
    m.config = config_;
    m.used_lla = used_lla;
    m.imbalance_ratio = ratio;
    m.fingerprint = workload_fingerprint(loads_, config_);
    m.gemms = gemms_;
    for (auto& g : m.gemms) {
        std::sort(g.begin(), g.end(), [](const GemmRecord& a, const GemmRecord& b) { return a.expert < b.expert; });
    }
    for (const auto& per_device : messages_) m.messages.insert(m.messages.end(), per_device.begin(), per_device.end());
    m.messages = coalesce_messages(std::move(m.messages));
    m.imports.resize(static_cast<std::size_t>(world()));
    for (const auto& t : transfers_.transfers) m.imports[static_cast<std::size_t>(t.dst_device)].push_back(t.expert);
    for (auto& s : m.imports) std::sort(s.begin(), s.end());
    m.tokens_executed.assign(static_cast<std::size_t>(world()), 0);
    for (std::size_t p = 0; p < m.gemms.size(); ++p) {
        for (const auto& g : m.gemms[p]) m.tokens_executed[p] += g.rows;
    }
    return m;
}

std::int64_t StepRunner::rows_sent() const { return std::accumulate(sent_.begin(), sent_.end(), std::int64_t{0}); }

std::int64_t StepRunner::rows_received() const {
    return std::accumulate(received_.begin(), received_.end(), std::int64_t{0});
}

}  // namespace llep::detail
