// cli.hpp: the `deft` command-line front end.
#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace deft {

/// Subcommands: track, simulate, train-matcher, train-lstm, evaluate, ablate.
/// Returns 0 on success and a nonzero code after printing a message to `err`.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace deft
