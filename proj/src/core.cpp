// Copyright (c) 2026, The LLEP Authors
// SPDX-License-Identifier: Apache-2.0

#include "llep/core.hpp"

#include <cmath>

namespace llep {

void validate_config(const MoeConfig& config) {
    if (config.n_experts < 1) throw LlepError("N must be positive");
    if (config.top_k < 1) throw LlepError("K must be positive");
    if (config.d_model < 1) throw LlepError("D must be positive");
    if (config.d_hidden < 1) throw LlepError("H must be positive");
    if (config.world_size < 1) throw LlepError("P must be positive");
    if (config.n_experts % config.world_size != 0) throw LlepError("N not divisible by P");
    if (config.top_k > config.n_experts) throw LlepError("K exceeds N");
}

void validate_config(const MoeConfig& config, const PlannerConfig& planner) {
    validate_config(config);
    if (!(planner.alpha >= 1.0)) throw LlepError("alpha must be >= 1");
    if (planner.min_chunk < 0) throw LlepError("min_chunk must be nonnegative");
    if (!(planner.lambda >= 1.0)) throw LlepError("lambda must be >= 1");
}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) throw LlepError("matrix data size does not match shape");
}

bool Matrix::all_finite() const {
    for (double v : data_) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows()) throw LlepError("matmul shape mismatch");
    Matrix c(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        auto out = c.row(i);
        for (std::size_t k = 0; k < a.cols(); ++k) {
            const double aik = a(i, k);
            auto brow = b.row(k);
            for (std::size_t j = 0; j < b.cols(); ++j) out[j] += aik * brow[j];
        }
    }
    return c;
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) throw LlepError("max_abs_diff shape mismatch");
    double worst = 0.0;
    auto da = a.data();
    auto db = b.data();
    for (std::size_t i = 0; i < da.size(); ++i) {
        const double d = std::abs(da[i] - db[i]);
        if (!(d <= worst)) worst = d;  // propagates NaN
    }
    return worst;
}

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

Rng Rng::substream(std::uint64_t seed, std::uint64_t stream) {
    return Rng(splitmix64(seed ^ splitmix64(stream + 1)));
}

ModelParams init_model_params(const MoeConfig& config, std::uint64_t seed) {
    validate_config(config);
    const auto d = static_cast<std::size_t>(config.d_model);
    const auto h = static_cast<std::size_t>(config.d_hidden);
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));

    ModelParams params;
    Rng router_rng = Rng::substream(seed, 0x524f55544552ULL);
    params.router_weights = Matrix(d, static_cast<std::size_t>(config.n_experts));
    for (double& v : params.router_weights.data()) v = router_rng.normal() * scale;

    params.expert_weights.reserve(static_cast<std::size_t>(config.n_experts));
    for (int i = 0; i < config.n_experts; ++i) {
        Rng rng = Rng::substream(seed, static_cast<std::uint64_t>(i) + 1);
        Matrix w(d, h);
        for (double& v : w.data()) v = rng.normal() * scale;
        params.expert_weights.push_back(std::move(w));
    }
    return params;
}

}  // namespace llep
