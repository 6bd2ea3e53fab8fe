#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace reanno::cli {

/// Runs one subcommand. Prints a one-line JSON summary to `out` on success.
/// Returns 0 on success, 1 on validation or usage errors, 2 on I/O errors.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int dispatch(int argc, char** argv);

}  // namespace reanno::cli
