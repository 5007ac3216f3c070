#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace climemu {

/// Exit codes of the command-line driver.
inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitMissingInput = 2;
inline constexpr int kExitValidation = 3;

/// Runs one subcommand. `args` excludes the program name. Machine-readable
/// results go to `out`, progress and the one-line JSON error to `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run_cli(int argc, char** argv);

}  // namespace climemu
