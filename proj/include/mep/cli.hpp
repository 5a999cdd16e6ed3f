#pragma once

// Command-line front end: `ask`, `run`, `judge`, `report`.
//
// Exit codes
//   0  success
//   1  usage or configuration error, sample-id mismatch, malformed record line
//   2  model output could not be parsed
//   3  backend unavailable or rejected the request
//   4  output sink not writable
//   5  batch finished but some samples failed

#include <iosfwd>
#include <string>
#include <vector>

namespace mep::cli {

enum ExitCode : int {
    kExitOk = 0,
    kExitUsage = 1,
    kExitParseFailure = 2,
    kExitBackendFailure = 3,
    kExitSinkUnwritable = 4,
    kExitBatchFailures = 5,
};

/// `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

int main(int argc, char** argv);

}  // namespace mep::cli
