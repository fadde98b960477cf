// Copyright (c) 2026, The LLEP Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace llep {

/// Parses `args` (without the program name) and runs the selected subcommand.
/// Returns the process exit code: 0 success, 1 invalid input, 2 failed check.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace llep
