#ifndef SEPNET_TOOLS_CLI_HPP
#define SEPNET_TOOLS_CLI_HPP

#include <iosfwd>

namespace sepnet {

/// Entry point of the sepnet command line: cost, split, dedup, train, eval,
/// predict and report. Data goes to `out`, diagnostics (including the resolved
/// configuration) to `err`; `in` answers the interactive training prompt.
/// Returns 0 on success, 1 on a runtime failure and 2 on a usage error.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err, std::istream& in);

}  // namespace sepnet

#endif  // SEPNET_TOOLS_CLI_HPP
