#pragma once

namespace milgrad {

// Entry point behind the milgrad binary; exposed so tests can drive
// subcommands in-process. Exit codes: 0 success, 1 runtime failure,
// 2 usage or config error.
int cli_main(int argc, const char* const* argv);

}  // namespace milgrad
