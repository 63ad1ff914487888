#pragma once

#include <string>
#include <vector>

namespace poolforge {

/// Exit codes: 0 success, 1 validation or usage error, 2 internal error.
int run_cli(int argc, char** argv);
int run_cli(const std::vector<std::string>& args);  // args exclude the program name

}  // namespace poolforge
