#pragma once

#include <string>
#include <vector>

namespace radsum {

// Full command-line driver: parses argv (without the program name), runs one
// subcommand, and returns the process exit code. 0 = success, 2 = bad usage
// or config schema violation, 1 = runtime failure. Diagnostics go to stderr;
// requested data (stats tables, metric tables) goes to stdout.
int run_command(const std::vector<std::string>& args);

}  // namespace radsum
