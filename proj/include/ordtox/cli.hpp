#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace ordtox {

/// Exit codes of the command-line tool.
enum ExitCode : int { kExitOk = 0, kExitIo = 1, kExitValidation = 2, kExitInfeasible = 3 };

/// Runs `ordtox <args...>` (args excludes the program name).
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace ordtox
