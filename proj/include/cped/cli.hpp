#pragma once

#include <string>
#include <vector>

namespace cped::harness {

// Exit codes: 0 success, 1 validation error or bad usage, 2 runtime failure.
int run_cli(int argc, const char* const* argv);
int run_cli(const std::vector<std::string>& args);  // args exclude the program name

}  // namespace cped::harness
