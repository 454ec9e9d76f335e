#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace csam::cli {

/// Process exit codes; the set is closed.
enum ExitCode : int {
  kOk = 0,
  kCheckFailed = 1,
  kConfigError = 2,
  kIoError = 3,
  kNonFinite = 4,
  kShapeMismatch = 5,
};

/// Parses argv and dispatches to a subcommand: gen-data, gradcheck,
/// paramcount, train, eval, report.
int run(int argc, char** argv, std::ostream& out, std::ostream& err);

/// Same, from a vector of arguments (argv[0] excluded).
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace csam::cli
