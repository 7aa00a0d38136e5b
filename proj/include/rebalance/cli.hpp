#pragma once

#include <iostream>

namespace rebalance {

/// Exit codes of the command-line tool.
enum ExitCode : int {
  kExitOk = 0,
  kExitValidation = 2,
  kExitIterationCap = 3,
  kExitForcedStop = 4,
};

/// Entry point of the `rebalance` tool. Documents go to `out`; failures are
/// reported on `err` as one line of JSON {"error": kind, "message": text}.
int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout,
            std::ostream& err = std::cerr);

}  // namespace rebalance
