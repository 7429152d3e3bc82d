#pragma once

#include <iosfwd>

namespace pam {

/// Entry point of the `pam` tool. Exit codes: 0 success, 1 runtime
/// failure, 2 usage or configuration error.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

} // namespace pam
