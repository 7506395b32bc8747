#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace xbprune {

inline constexpr const char* kVersion = "0.1.0";

// Runs one command line (without the program name). Returns the process exit
// code: 0 success, 2 invalid input, 3 numerical failure, 1 anything else.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace xbprune
