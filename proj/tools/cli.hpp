#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace dip {

/// Runs one invocation of the command-line tool. args excludes the program
/// name. Returns 0 on success, 2 on usage errors and 1 on other failures.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace dip
