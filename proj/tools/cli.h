// Copyright 2026 The changeadapt Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace changeadapt::cli {

/// Runs one `changeadapt` invocation. args excludes the program name.
/// Returns the process exit code; never throws.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace changeadapt::cli
