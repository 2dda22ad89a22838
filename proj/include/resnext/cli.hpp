#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace resnext {

// Subcommands: prepare, train, eval, verify-blocks, count-params, plot, sweep.
// Returns the process exit status: 0 on success, 1 when verify-blocks sees a
// deviation above tolerance, 2 on any error (after one diagnostic line on err).
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace resnext
