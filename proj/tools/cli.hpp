// Copyright (c) 2026, The agglo Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <iosfwd>

namespace agglo::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

/// Parses argv and dispatches one subcommand. Diagnostics go to `err` as a
/// single line; every file written lands under --out.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace agglo::cli
