#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace bgee {

enum ExitCode : int {
    exit_ok = 0,
    exit_failure = 1,        // a fit failed, or a method failed on every replicate
    exit_invalid_input = 2,  // usage errors and unreadable or invalid input
};

/// Runs the command line `bgee <fit|simulate|generate> ...`. `args` excludes
/// the program name. Tables go to `out`, diagnostics to `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace bgee
