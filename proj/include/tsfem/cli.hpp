#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace tsfem {

enum ExitCode : int
{
  exit_ok = 0,
  exit_usage = 1,
  exit_validation = 2,
  exit_solver = 3,
  exit_adapt_incomplete = 4,
  exit_check_failed = 5,
};

/// Command-line front end. `args` excludes the program name. Human-readable
/// progress goes to `out`; failures print a one-line JSON error record to
/// `err` and, when possible, to error.json in the output directory.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

} // namespace tsfem
