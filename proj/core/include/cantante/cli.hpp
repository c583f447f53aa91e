#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace cantante {

/// Command-line front end. `args` excludes the program name.
/// Exit codes are a stable scripting contract: 0 success, 1 domain or
/// validation failure, 2 I/O or configuration failure.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace cantante
