#pragma once

#include <string>
#include <vector>

namespace pqt {

// Runs the command-line tool. Exit codes: 0 success, 1 validation or
// configuration error, 2 runtime failure.
int run_cli(const std::vector<std::string>& args);

} // namespace pqt
