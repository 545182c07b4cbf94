#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace clap::cli {

// Exit codes shared by every command.
inline constexpr int k_exit_ok = 0;
inline constexpr int k_exit_io = 2;
inline constexpr int k_exit_degenerate = 3;
inline constexpr int k_exit_usage = 64;

/// Runs the command line `args` (without the program name), writing normal
/// output to `out` and diagnostics to `err`. Returns the process exit code.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace clap::cli
