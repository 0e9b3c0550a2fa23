#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace dacsm {

// Exit codes shared by the binary and the in-process CLI tests.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;  // failed verification, unexpected errors
inline constexpr int kExitConfig = 2;   // usage, configuration and checkpoint problems
inline constexpr int kExitNumeric = 3;  // non-finite values during training

// Command line driver. args excludes the program name. All output goes to the
// given streams, so tests can run commands in process.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run_cli(int argc, char** argv);

}  // namespace dacsm
