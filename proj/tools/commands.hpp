#pragma once

#include <iosfwd>

namespace attnlab::cli {

/// Parse and run one CLI invocation. Returns the process exit code:
/// 0 on success, 1 when a check fails, 2 on usage errors.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

} // namespace attnlab::cli
