#pragma once

#include <string>
#include <vector>

namespace mosaic {

// Full CLI entry point: args[0] is the program name, args[1] the command.
// Returns the process exit status: 0 on success, 1 on errors (with a single
// machine-readable line on stderr), 2 for an unknown command.
int run_cli(const std::vector<std::string>& args);

}  // namespace mosaic
