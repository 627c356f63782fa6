#ifndef FEDRUN_CLI_HPP_
#define FEDRUN_CLI_HPP_

#include <iosfwd>
#include <string>
#include <vector>

namespace fedrun {

/// Exit codes shared by the subcommands.
enum ExitCode : int {
    kExitOk = 0,
    kExitFailed = 1,  // experiment aborted
    kExitConfig = 2,  // bad config, scenario, unknown site or unreadable input
    kExitStartup = 3, // startup, checkpoint or listen failure
};

/// Entry point of the `fedrun` binary. `args` excludes the program name.
/// Results go to `out`, diagnostics to `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace fedrun

#endif  // FEDRUN_CLI_HPP_
