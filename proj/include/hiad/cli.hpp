#pragma once

#include <iosfwd>

namespace hiad {

/// Entry point of the `hiad` tool. Returns the process exit code:
/// 0 success, 2 configuration, 3 data, 4 numeric.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace hiad
