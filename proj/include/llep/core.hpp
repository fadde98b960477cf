// Copyright (c) 2026, The LLEP Authors
// SPDX-License-Identifier: Apache-2.0
//
// Shared domain types for the least-loaded expert parallelism library:
// layer/world shape, planner knobs, a dense row-major matrix, the seeded
// random source and the per-layer model parameters.

#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace llep {

/// Raised for any violated precondition or invariant on user-facing input.
class LlepError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct MoeConfig {
    int n_experts = 0;   // N
    int top_k = 0;       // K
    int d_model = 0;     // D
    int d_hidden = 0;    // H
    int world_size = 0;  // P

    int experts_per_device() const { return world_size > 0 ? n_experts / world_size : 0; }

    /// Device statically hosting expert `expert`.
    int native_device(int expert) const { return expert / experts_per_device(); }

    bool operator==(const MoeConfig&) const = default;
};

struct PlannerConfig {
    double alpha = 1.0;         // capacity factor
    std::int64_t min_chunk = 1024;  // minimum tokens per spilled GEMM
    double lambda = 1.3;        // imbalance ratio below which standard EP is used

    bool operator==(const PlannerConfig&) const = default;
};

/// Throws LlepError naming the first violated invariant.
void validate_config(const MoeConfig& config, const PlannerConfig& planner);
void validate_config(const MoeConfig& config);

/// Dense row-major matrix of doubles.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    bool empty() const { return data_.empty(); }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

    std::span<double> data() { return data_; }
    std::span<const double> data() const { return data_; }

    bool all_finite() const;

    bool operator==(const Matrix&) const = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

/// C = A * B with a fixed i-k-j accumulation order.
Matrix matmul(const Matrix& a, const Matrix& b);

/// Largest absolute elementwise difference; throws on shape mismatch.
double max_abs_diff(const Matrix& a, const Matrix& b);

/// 64-bit seeded source. All randomness in the library flows through this.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    /// Independent stream derived from (seed, stream id).
    static Rng substream(std::uint64_t seed, std::uint64_t stream);

    double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }
    double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(engine_); }
    double normal() { return normal_(engine_); }
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
        return std::uniform_int_distribution<std::int64_t>(lo, hi)(engine_);
    }
    std::mt19937_64& engine() { return engine_; }

private:
    std::mt19937_64 engine_;
    std::normal_distribution<double> normal_{0.0, 1.0};
};

std::uint64_t splitmix64(std::uint64_t x);

struct ModelParams {
    Matrix router_weights;               // D x N
    std::vector<Matrix> expert_weights;  // N of D x H
};

/// Gaussian init scaled by 1/sqrt(D).
ModelParams init_model_params(const MoeConfig& config, std::uint64_t seed);

struct TokenBatch {
    int device_id = 0;
    Matrix tokens;  // B_p x D
};

}  // namespace llep
