// Copyright (c) 2026, The LLEP Authors
// SPDX-License-Identifier: Apache-2.0
//
// Randomized self-checks behind `llep verify`.
//
// Each trial draws its configuration from splitmix64(seed + trial), so a
// failing trial can be replayed from the seed and trial number printed in the
// failure line.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "llep/simexec.hpp"

namespace llep {

struct VerifyOptions {
    std::uint64_t seed = 1;
    int trials = 100;  // exactness trials; invariants run 10x, gradients trials/5 (at least 1)
    ExecMode mode = ExecMode::serial;
    bool inject_fault = false;  // shift one chunk boundary in every plan-invariant trial
    double exactness_tol = 1e-10;
    double gradient_tol = 1e-10;
    double finite_difference_rtol = 1e-4;
};

struct SuiteResult {
    std::string name;
    int passed = 0;
    int total = 0;
    std::vector<std::string> failures;  // one line per failing trial, with replay information

    bool ok() const { return passed == total; }
};

struct VerifyReport {
    std::vector<SuiteResult> suites;
    bool vacuous = false;

    bool ok() const;
};

VerifyReport run_verify(const VerifyOptions& options);

/// Per-suite pass counts, failure lines, and a final "verify: PASS" / "verify: FAIL".
std::string format_verify_report(const VerifyReport& report);

/// Moves the first interior chunk boundary found by one token (or shortens the
/// first nonempty chunk when no expert is split). Returns false when the plan
/// has no chunk to alter.
bool shift_chunk_boundary(AssignmentPlan& plan);

}  // namespace llep
