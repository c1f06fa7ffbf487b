#pragma once

namespace xpro {

/// Entry point behind the `xpro` binary; also called in-process by tests.
/// Exit codes: 0 success, 2 config error, 3 data error, 4 numeric
/// divergence, 1 anything else.
int run_cli(int argc, const char* const* argv);

}  // namespace xpro
