#pragma once

namespace pfsd {

// Full command-line entry point. Returns the process exit code: 0 success,
// 1 validation/config error, 2 runtime or numeric error.
int run_cli(int argc, const char* const* argv);

}  // namespace pfsd
