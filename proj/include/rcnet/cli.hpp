#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace rcnet {

enum ExitCode { exit_ok = 0, exit_usage = 1, exit_data = 2, exit_numeric = 3 };

/// Runs one subcommand (synth, train, enhance, eval, align-inspect,
/// gradcheck). Errors are reported on `err`; returns an ExitCode.
int dispatch(const std::vector<std::string> &args, std::ostream &out, std::ostream &err);
int dispatch(int argc, char **argv);

} // namespace rcnet
