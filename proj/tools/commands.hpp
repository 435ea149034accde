#pragma once

// The `posecov` command-line tool, callable in-process for tests.

#include <iosfwd>
#include <string>
#include <vector>

namespace posecov::cli {

enum ExitCode : int {
  kOk = 0,
  kUsage = 1,
  kDataError = 2,
  kNumericalFailure = 3,
};

/// Runs one command. `args` excludes the program name. Reports go to `out`,
/// diagnostics to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace posecov::cli
