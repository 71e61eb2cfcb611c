#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace mmmil {

/// Runs one CLI invocation (argv without the program name). Exit codes:
/// 0 success, 1 usage error, 2 data error, 3 runtime failure. Errors emit one
/// machine-parsable JSON line on `err`.
int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace mmmil
