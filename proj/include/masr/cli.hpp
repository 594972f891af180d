#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace masr {

// The full command-line surface, callable in-process so tests can drive it.
// Returns the process exit code: 0 on success, nonzero with an
// "error[<category>] ..." line on err otherwise.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace masr
