#pragma once

#include <string>
#include <vector>

namespace offnadir {

inline constexpr const char* kToolVersion = "0.1.0";

// Runs one CLI invocation (args exclude the program name).
// Returns 0 on success, 1 on usage errors, 2 on runtime errors.
int run_cli(const std::vector<std::string>& args);

}  // namespace offnadir
