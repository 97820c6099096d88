#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace arapflow {

/// Entry point of the `arapflow` binary. `args` excludes the program name.
/// Returns 0 on success, 2 on argument or validation errors and 1 on runtime
/// failures.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace arapflow
