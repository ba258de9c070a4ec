#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace ikdp {

/// Runs one command line (args[0] is the program name). Returns 0 on
/// success, 1 on a usage error, 2 on a runtime error; errors go to `err` as
/// a single line.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace ikdp
