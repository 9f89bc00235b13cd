#pragma once

// Command-line front end. `run` is the whole program minus process setup so
// tests can drive it in-process.

#include "qbic/common.hpp"

#include <ostream>
#include <string>
#include <vector>

namespace qbic::cli {

enum ExitCode : int {
  kOk = 0,
  kInternal = 1,
  kUsage = 2,
  kIo = 3,
  kParse = 4,
  kInvalidInput = 5,
  kFitFailure = 6,
  kNumerical = 7,
};

int exit_code_for(ErrorKind kind);

/// Subcommand names in the order they appear in help output. `calib` takes
/// `save` or `load`.
const std::vector<std::string>& subcommands();

/// args excludes the program name. Errors become one line on `err`:
///   error: code=<kind> message="<text>"
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace qbic::cli
