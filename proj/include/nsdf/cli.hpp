#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace nsdf {

/// Runs one `nsdf` command. `args` excludes the program name.
/// Returns 0 on success, 1 on a domain error (one line on `err`), and 2 on a
/// usage error (message plus synopsis on `err`).
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace nsdf
