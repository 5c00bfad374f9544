#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace weylab {

/// Exit codes shared by every subcommand.
enum ExitCode : int { kExitOk = 0, kExitFailed = 1, kExitUsage = 2 };

/// Entry point behind the weylab executable. `args` excludes the program
/// name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace weylab
